#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

namespace hjsynth {

struct MultiIndex {
    std::vector<int> powers;

    int dim() const { return static_cast<int>(powers.size()); }
    int degree() const;
    bool operator==(const MultiIndex& o) const { return powers == o.powers; }
};

// Count of d-variate monomials with total degree in [1, M]:
// sum_{m=1..M} C(d+m-1, m). Throws std::overflow_error when the count does
// not fit in 64 bits.
std::uint64_t basis_cardinality(int d, int M);

// Total-degree monomial basis with the constant excluded, so every basis
// element vanishes at the origin. Graded lexicographic ordering: ascending
// total degree, and within a degree the leading coordinate carries the
// highest power first ({x1, x2, x1^2, x1*x2, x2^2} for d = M = 2).
class MonomialBasis {
public:
    MonomialBasis() = default;
    MonomialBasis(int d, int M);

    int dim() const { return d_; }
    int max_degree() const { return M_; }
    int size() const { return static_cast<int>(indices_.size()); }
    const MultiIndex& operator[](int i) const { return indices_[i]; }
    const std::vector<MultiIndex>& indices() const { return indices_; }

    // Position of a multi-index in this basis, or -1 when absent.
    int find(const std::vector<int>& powers) const;

private:
    int d_ = 0;
    int M_ = 0;
    std::vector<MultiIndex> indices_;
    std::unordered_map<std::uint64_t, int> lookup_;  // FNV key -> position
};

MonomialBasis enumerate_basis(int d, int M);

Eigen::VectorXd eval_basis(const MonomialBasis& b, const Eigen::VectorXd& x);
// Entry (i,k) = d phi_i / d x_k at x.
Eigen::MatrixXd eval_basis_gradient(const MonomialBasis& b, const Eigen::VectorXd& x);

// Value and gradient of sum_i c_i phi_i(x) without materializing the n x d
// gradient matrix.
double eval_combination(const MonomialBasis& b, const Eigen::VectorXd& c, const Eigen::VectorXd& x);
Eigen::VectorXd eval_combination_gradient(const MonomialBasis& b, const Eigen::VectorXd& c,
                                          const Eigen::VectorXd& x);

// Symbolic partial derivative of a monomial: returns (nu_k, mi - e_k) when
// nu_k >= 1, otherwise (0, nullopt).
std::pair<int, std::optional<MultiIndex>> partial_derivative_index(const MultiIndex& mi, int k);

}  // namespace hjsynth
