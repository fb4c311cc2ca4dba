#include "hjsynth/basis.hpp"

#include "hjsynth/separable.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace hjsynth {

namespace {

std::uint64_t fnv_key(const std::vector<int>& powers) {
    std::uint64_t h = 1469598103934665603ull;
    for (int p : powers) {
        h ^= static_cast<std::uint64_t>(p) + 0x9e3779b97f4a7c15ull;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
    std::uint64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("basis_cardinality: count overflows");
    return r;
}

// C(n, k) with overflow detection.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t acc = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        std::uint64_t num = n - k + i;
        std::uint64_t g = std::gcd(acc, i);
        std::uint64_t acc2 = acc / g;
        std::uint64_t den = i / g;
        std::uint64_t g2 = std::gcd(num, den);
        num /= g2;
        den /= g2;
        // den divides acc2 * num exactly at this point
        std::uint64_t r;
        if (__builtin_mul_overflow(acc2, num, &r)) throw std::overflow_error("basis_cardinality: count overflows");
        acc = r / den;
    }
    return acc;
}

void enumerate_degree(int d, int m, int coord, std::vector<int>& work,
                      std::vector<MultiIndex>& out) {
    if (coord == d - 1) {
        work[coord] = m;
        out.push_back(MultiIndex{work});
        return;
    }
    for (int p = m; p >= 0; --p) {
        work[coord] = p;
        enumerate_degree(d, m - p, coord + 1, work, out);
    }
}

}  // namespace

int MultiIndex::degree() const {
    int s = 0;
    for (int p : powers) s += p;
    return s;
}

std::uint64_t basis_cardinality(int d, int M) {
    if (d < 1 || M < 1) throw std::invalid_argument("basis_cardinality: requires d >= 1 and M >= 1");
    std::uint64_t n = 0;
    for (int m = 1; m <= M; ++m)
        n = checked_add(n, binomial(static_cast<std::uint64_t>(d) + m - 1, m));
    return n;
}

MonomialBasis::MonomialBasis(int d, int M) : d_(d), M_(M) {
    if (d < 1 || M < 1) throw std::invalid_argument("MonomialBasis: requires d >= 1 and M >= 1");
    const std::uint64_t n = basis_cardinality(d, M);
    indices_.reserve(n);
    std::vector<int> work(d, 0);
    for (int m = 1; m <= M; ++m) enumerate_degree(d, m, 0, work, indices_);
    lookup_.reserve(indices_.size());
    for (int i = 0; i < size(); ++i) lookup_.emplace(fnv_key(indices_[i].powers), i);
}

int MonomialBasis::find(const std::vector<int>& powers) const {
    auto it = lookup_.find(fnv_key(powers));
    if (it == lookup_.end()) return -1;
    // FNV collisions are possible in principle; confirm.
    if (indices_[it->second].powers != powers) {
        for (int i = 0; i < size(); ++i)
            if (indices_[i].powers == powers) return i;
        return -1;
    }
    return it->second;
}

MonomialBasis enumerate_basis(int d, int M) { return MonomialBasis(d, M); }

namespace {

void check_dim(const MonomialBasis& b, const Eigen::VectorXd& x, const char* where) {
    if (x.size() != b.dim())
        throw std::invalid_argument(std::string(where) + ": state dimension " +
                                    std::to_string(x.size()) + " != " + std::to_string(b.dim()));
}

// x_t^p for p = 0..M, per coordinate.
Eigen::MatrixXd power_table(const MonomialBasis& b, const Eigen::VectorXd& x) {
    Eigen::MatrixXd tab(b.dim(), b.max_degree() + 1);
    for (int t = 0; t < b.dim(); ++t) {
        tab(t, 0) = 1.0;
        for (int p = 1; p <= b.max_degree(); ++p) tab(t, p) = tab(t, p - 1) * x[t];
    }
    return tab;
}

}  // namespace

Eigen::VectorXd eval_basis(const MonomialBasis& b, const Eigen::VectorXd& x) {
    check_dim(b, x, "eval_basis");
    const Eigen::MatrixXd tab = power_table(b, x);
    Eigen::VectorXd out(b.size());
    for (int i = 0; i < b.size(); ++i) {
        const auto& nu = b[i].powers;
        double v = 1.0;
        for (int t = 0; t < b.dim(); ++t) v *= tab(t, nu[t]);
        out[i] = v;
    }
    return out;
}

Eigen::MatrixXd eval_basis_gradient(const MonomialBasis& b, const Eigen::VectorXd& x) {
    check_dim(b, x, "eval_basis_gradient");
    const int d = b.dim();
    const Eigen::MatrixXd tab = power_table(b, x);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(b.size(), d);
    std::vector<double> prefix(d + 1), suffix(d + 1);
    for (int i = 0; i < b.size(); ++i) {
        const auto& nu = b[i].powers;
        prefix[0] = 1.0;
        for (int t = 0; t < d; ++t) prefix[t + 1] = prefix[t] * tab(t, nu[t]);
        suffix[d] = 1.0;
        for (int t = d - 1; t >= 0; --t) suffix[t] = suffix[t + 1] * tab(t, nu[t]);
        for (int k = 0; k < d; ++k) {
            if (nu[k] == 0) continue;
            out(i, k) = nu[k] * prefix[k] * suffix[k + 1] * tab(k, nu[k] - 1);
        }
    }
    return out;
}

double eval_combination(const MonomialBasis& b, const Eigen::VectorXd& c, const Eigen::VectorXd& x) {
    check_dim(b, x, "eval_combination");
    if (c.size() != b.size()) throw std::invalid_argument("eval_combination: coefficient size mismatch");
    const Eigen::MatrixXd tab = power_table(b, x);
    double sum = 0.0;
    for (int i = 0; i < b.size(); ++i) {
        const auto& nu = b[i].powers;
        double v = 1.0;
        for (int t = 0; t < b.dim(); ++t) v *= tab(t, nu[t]);
        sum += c[i] * v;
    }
    return sum;
}

Eigen::VectorXd eval_combination_gradient(const MonomialBasis& b, const Eigen::VectorXd& c,
                                          const Eigen::VectorXd& x) {
    check_dim(b, x, "eval_combination_gradient");
    if (c.size() != b.size())
        throw std::invalid_argument("eval_combination_gradient: coefficient size mismatch");
    const int d = b.dim();
    const Eigen::MatrixXd tab = power_table(b, x);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
    std::vector<double> prefix(d + 1), suffix(d + 1);
    for (int i = 0; i < b.size(); ++i) {
        if (c[i] == 0.0) continue;
        const auto& nu = b[i].powers;
        prefix[0] = 1.0;
        for (int t = 0; t < d; ++t) prefix[t + 1] = prefix[t] * tab(t, nu[t]);
        suffix[d] = 1.0;
        for (int t = d - 1; t >= 0; --t) suffix[t] = suffix[t + 1] * tab(t, nu[t]);
        for (int k = 0; k < d; ++k) {
            if (nu[k] == 0) continue;
            grad[k] += c[i] * nu[k] * prefix[k] * suffix[k + 1] * tab(k, nu[k] - 1);
        }
    }
    return grad;
}

std::pair<int, std::optional<MultiIndex>> partial_derivative_index(const MultiIndex& mi, int k) {
    if (k < 0 || k >= mi.dim()) throw std::invalid_argument("partial_derivative_index: coordinate out of range");
    if (mi.powers[k] == 0) return {0, std::nullopt};
    MultiIndex out = mi;
    out.powers[k] -= 1;
    return {mi.powers[k], std::move(out)};
}

}  // namespace hjsynth
