#pragma once

// Dense tensor-product quadrature oracle for the Galerkin inner products.
// Every entry is integrated pointwise from the defining expressions, with no
// use of the separable factorization, so it independently checks the
// table-based assembly.

#include "hjsynth/basis.hpp"
#include "hjsynth/system.hpp"

#include <Eigen/Dense>

#include <vector>

namespace hjsynth::testing {

struct DenseGrid {
    std::vector<Eigen::VectorXd> points;
    std::vector<double> weights;
};

inline DenseGrid dense_grid(const Hyperrectangle& domain, int order) {
    const int d = domain.dim();
    std::vector<QuadratureRule> rules;
    for (int t = 0; t < d; ++t) rules.push_back(gauss_legendre(order, domain.intervals[t]));
    DenseGrid grid;
    std::vector<int> idx(d, 0);
    for (;;) {
        Eigen::VectorXd x(d);
        double w = 1.0;
        for (int t = 0; t < d; ++t) {
            x[t] = rules[t].nodes[idx[t]];
            w *= rules[t].weights[idx[t]];
        }
        grid.points.push_back(std::move(x));
        grid.weights.push_back(w);
        int t = 0;
        while (t < d && ++idx[t] == order) idx[t++] = 0;
        if (t == d) break;
    }
    return grid;
}

inline Eigen::MatrixXd oracle_F(const ControlSystem& sys, const MonomialBasis& basis,
                                const DenseGrid& grid) {
    const int n = basis.size();
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, n);
    for (size_t k = 0; k < grid.points.size(); ++k) {
        const Eigen::VectorXd& x = grid.points[k];
        const Eigen::VectorXd phi = eval_basis(basis, x);
        const Eigen::MatrixXd dphi = eval_basis_gradient(basis, x);
        Eigen::VectorXd f(sys.dim());
        for (int i = 0; i < sys.dim(); ++i) f[i] = sys.f.entry(i, 0).eval(x);
        const Eigen::VectorXd df = dphi * f;  // component j = Dphi_j . f
        F += grid.weights[k] * phi * df.transpose();
    }
    return F;
}

inline Eigen::MatrixXd oracle_contraction(const ControlSystem& sys, const MonomialBasis& basis,
                                          const SeparableMap& channel,
                                          const Eigen::MatrixXd& weight_inv,
                                          const Eigen::VectorXd& c_other, double scale,
                                          const DenseGrid& grid) {
    const int n = basis.size();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    for (size_t k = 0; k < grid.points.size(); ++k) {
        const Eigen::VectorXd& x = grid.points[k];
        const Eigen::VectorXd phi = eval_basis(basis, x);
        const Eigen::MatrixXd dphi = eval_basis_gradient(basis, x);
        const Eigen::MatrixXd cx = channel.eval(x);  // d x channels
        const Eigen::VectorXd grad_other = eval_combination_gradient(basis, c_other, x);
        // row_j = (c' Dphi_j)' W (c' grad_other)
        const Eigen::MatrixXd proj = dphi * cx;                    // n x channels
        const Eigen::VectorXd fixed = weight_inv * (cx.transpose() * grad_other);
        out += (scale * grid.weights[k]) * phi * (proj * fixed).transpose();
    }
    return out;
}

inline Eigen::MatrixXd oracle_H(const ControlSystem& sys, const MonomialBasis& basis,
                                const Eigen::VectorXd& c_prev, double gamma,
                                const DenseGrid& grid) {
    return oracle_contraction(sys, basis, sys.h, sys.P.inverse(), c_prev,
                              1.0 / (2.0 * gamma * gamma), grid);
}

inline Eigen::MatrixXd oracle_G(const ControlSystem& sys, const MonomialBasis& basis,
                                const Eigen::VectorXd& c_ctrl, const DenseGrid& grid) {
    return oracle_contraction(sys, basis, sys.g, sys.R.inverse(), c_ctrl, -0.5, grid);
}

inline Eigen::VectorXd oracle_rhs(const ControlSystem& sys, const MonomialBasis& basis,
                                  const Eigen::VectorXd& c_ctrl, const Eigen::VectorXd& c_prev,
                                  double gamma, const DenseGrid& grid) {
    const int n = basis.size();
    const Eigen::MatrixXd Rinv = sys.R.inverse();
    const bool with_w = sys.disturbance_dim() > 0 && std::isfinite(gamma);
    const Eigen::MatrixXd Pinv = with_w ? sys.P.inverse() : Eigen::MatrixXd();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (size_t k = 0; k < grid.points.size(); ++k) {
        const Eigen::VectorXd& x = grid.points[k];
        const Eigen::VectorXd phi = eval_basis(basis, x);
        const Eigen::VectorXd gc = eval_combination_gradient(basis, c_ctrl, x);
        const Eigen::MatrixXd gx = sys.g.eval(x);
        const Eigen::VectorXd u = -0.5 * Rinv * gx.transpose() * gc;
        double integrand = sys.ell.eval(x) + u.dot(sys.R * u);
        if (with_w) {
            const Eigen::VectorXd gp = eval_combination_gradient(basis, c_prev, x);
            const Eigen::MatrixXd hx = sys.h.eval(x);
            const Eigen::VectorXd w = Pinv * hx.transpose() * gp / (2.0 * gamma * gamma);
            integrand -= gamma * gamma * w.dot(sys.P * w);
        }
        b -= (grid.weights[k] * integrand) * phi;
    }
    return b;
}

}  // namespace hjsynth::testing
