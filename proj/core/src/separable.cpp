#include "hjsynth/separable.hpp"

#include <cmath>

namespace hjsynth {

double ipow(double x, int p) {
    double r = 1.0;
    double base = x;
    while (p > 0) {
        if (p & 1) r *= base;
        base *= base;
        p >>= 1;
    }
    return r;
}

Hyperrectangle Hyperrectangle::centered(int d, double half_width) {
    if (d < 1) throw std::invalid_argument("Hyperrectangle: dimension must be >= 1");
    std::vector<Interval> ivs(d, Interval(-half_width, half_width));
    return Hyperrectangle(std::move(ivs));
}

bool Hyperrectangle::contains(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) return false;
    for (int t = 0; t < dim(); ++t)
        if (!intervals[t].contains(x[t])) return false;
    return true;
}

double Hyperrectangle::max_half_width() const {
    double m = 0.0;
    for (const auto& iv : intervals) m = std::max(m, iv.half_width());
    return m;
}

Factor1D Factor1D::constant(double value) {
    Factor1D f;
    f.kind_ = Kind::Constant;
    f.a_ = value;
    if (!std::isfinite(value)) throw std::invalid_argument("Factor1D: constant must be finite");
    return f;
}

Factor1D Factor1D::monomial(int power) {
    if (power < 0) throw std::invalid_argument("Factor1D: monomial power must be >= 0");
    Factor1D f;
    f.kind_ = Kind::Monomial;
    f.p_ = power;
    return f;
}

Factor1D Factor1D::scaled_exponential(double a, double b, int power) {
    if (power < 0) throw std::invalid_argument("Factor1D: power must be >= 0");
    Factor1D f;
    f.kind_ = Kind::ScaledExponential;
    f.a_ = a;
    f.b_ = b;
    f.p_ = power;
    return f;
}

Factor1D Factor1D::scaled_monomial(double a, int power) {
    return scaled_exponential(a, 0.0, power);
}

Factor1D Factor1D::custom(Evaluator fn, std::string name) {
    Factor1D f;
    f.kind_ = Kind::Custom;
    f.fn_ = std::make_shared<const Evaluator>(std::move(fn));
    f.name_ = std::move(name);
    return f;
}

double Factor1D::eval(double x) const {
    switch (kind_) {
        case Kind::Constant: return a_;
        case Kind::Monomial: return ipow(x, p_);
        case Kind::ScaledExponential: return a_ * ipow(x, p_) * std::exp(b_ * x);
        case Kind::Custom: return (*fn_)(x);
    }
    return 0.0;
}

void SeparableScalar::add_term(std::vector<Factor1D> factors) {
    if (static_cast<int>(factors.size()) != dim)
        throw std::invalid_argument("SeparableScalar: term must have exactly one factor per coordinate");
    terms.push_back(std::move(factors));
}

void SeparableScalar::add_single_coordinate_term(int coord, Factor1D factor) {
    if (coord < 0 || coord >= dim) throw std::invalid_argument("SeparableScalar: coordinate out of range");
    std::vector<Factor1D> fs(dim, Factor1D::constant(1.0));
    fs[coord] = std::move(factor);
    terms.push_back(std::move(fs));
}

void SeparableScalar::add_two_coordinate_term(int c1, Factor1D f1, int c2, Factor1D f2) {
    if (c1 == c2) throw std::invalid_argument("SeparableScalar: coordinates must differ");
    if (c1 < 0 || c1 >= dim || c2 < 0 || c2 >= dim)
        throw std::invalid_argument("SeparableScalar: coordinate out of range");
    std::vector<Factor1D> fs(dim, Factor1D::constant(1.0));
    fs[c1] = std::move(f1);
    fs[c2] = std::move(f2);
    terms.push_back(std::move(fs));
}

double SeparableScalar::eval(const Eigen::VectorXd& x) const {
    if (x.size() != dim)
        throw std::invalid_argument("eval_separable: state dimension " + std::to_string(x.size()) +
                                    " != " + std::to_string(dim));
    double sum = 0.0;
    for (const auto& term : terms) {
        double prod = 1.0;
        for (int k = 0; k < dim && prod != 0.0; ++k) prod *= term[k].eval(x[k]);
        sum += prod;
    }
    return sum;
}

SeparableMap::SeparableMap(int d, int rows, int cols)
    : input_dim(d), out_rows(rows), out_cols(cols), entries(rows * cols, SeparableScalar(d)) {
    if (d < 1 || rows < 0 || cols < 0) throw std::invalid_argument("SeparableMap: bad shape");
}

SeparableMap SeparableMap::constant_column(int d, const Eigen::VectorXd& values) {
    SeparableMap m(d, static_cast<int>(values.size()), 1);
    for (int i = 0; i < values.size(); ++i)
        if (values[i] != 0.0) m.entry(i, 0).add_single_coordinate_term(0, Factor1D::constant(values[i]));
    return m;
}

SeparableScalar& SeparableMap::entry(int i, int j) {
    return entries.at(static_cast<size_t>(i) * out_cols + j);
}

const SeparableScalar& SeparableMap::entry(int i, int j) const {
    return entries.at(static_cast<size_t>(i) * out_cols + j);
}

Eigen::MatrixXd SeparableMap::eval(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd out(out_rows, out_cols);
    for (int i = 0; i < out_rows; ++i)
        for (int j = 0; j < out_cols; ++j) out(i, j) = entry(i, j).eval(x);
    return out;
}

int SeparableMap::max_terms_per_entry() const {
    int m = 0;
    for (const auto& e : entries) m = std::max(m, e.term_count());
    return m;
}

bool SeparableMap::is_structurally_zero() const {
    for (const auto& e : entries)
        for (const auto& term : e.terms) {
            bool zero = false;
            for (const auto& f : term)
                if (f.kind() == Factor1D::Kind::Constant && f.value() == 0.0) zero = true;
            if (!zero) return false;
        }
    return true;
}

namespace {

// Legendre polynomial value and derivative at x.
std::pair<double, double> legendre(int n, double x) {
    double p0 = 1.0, p1 = x;
    if (n == 0) return {1.0, 0.0};
    for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1.0);
    return {p1, dp};
}

}  // namespace

QuadratureRule gauss_legendre(int order, Interval iv) {
    if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
    QuadratureRule rule;
    rule.order = order;
    rule.interval = iv;
    rule.nodes.resize(order);
    rule.weights.resize(order);

    const double c = iv.center();
    const double h = iv.half_width();
    const int half = (order + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            auto [p, d] = legendre(order, x);
            dp = d;
            double dx = p / d;
            x -= dx;
            if (std::abs(dx) < 1e-15) {
                dp = legendre(order, x).second;
                break;
            }
        }
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = c - h * x;  // cos ordering is descending; store ascending
        rule.nodes[order - 1 - i] = c + h * x;
        rule.weights[i] = w * h;
        rule.weights[order - 1 - i] = w * h;
    }
    if (order % 2 == 1) rule.nodes[half - 1] = c;  // middle node exactly centered
    return rule;
}

double eval_factor(const Factor1D& f, double x) { return f.eval(x); }

double eval_separable(const SeparableScalar& s, const Eigen::VectorXd& x) { return s.eval(x); }

double integrate_factor_product(const std::vector<Factor1D>& factors, Interval iv,
                                const QuadratureRule& q) {
    QuadratureRule local;
    const QuadratureRule* rule = &q;
    if (q.interval.lo != iv.lo || q.interval.hi != iv.hi) {
        local = gauss_legendre(q.order, iv);
        rule = &local;
    }
    double sum = 0.0;
    for (size_t k = 0; k < rule->nodes.size(); ++k) {
        double prod = 1.0;
        for (const auto& f : factors) {
            double v = f.eval(rule->nodes[k]);
            if (!std::isfinite(v))
                throw std::runtime_error("integrate_factor_product: non-finite factor value at node");
            prod *= v;
        }
        sum += rule->weights[k] * prod;
    }
    return sum;
}

}  // namespace hjsynth
