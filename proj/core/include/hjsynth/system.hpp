#pragma once

#include "hjsynth/separable.hpp"

#include <Eigen/Dense>

#include <limits>

namespace hjsynth {

// Marker for the disturbance-free design (the attenuation terms vanish).
inline double infinite_gamma() { return std::numeric_limits<double>::infinity(); }

// Control-affine system bundle
//   xdot = f(x) + g(x) u + h(x) w
// with running cost ell(x) + u' R u and disturbance penalty w' P w.
// h may have zero columns (no disturbance channel).
struct ControlSystem {
    SeparableMap f;    // d x 1
    SeparableMap g;    // d x m
    SeparableMap h;    // d x p (p may be 0)
    SeparableScalar ell;
    Eigen::MatrixXd R;  // m x m, SPD
    Eigen::MatrixXd P;  // p x p, SPD
    Hyperrectangle domain;

    int dim() const { return f.input_dim; }
    int control_dim() const { return g.out_cols; }
    int disturbance_dim() const { return h.out_cols; }
    bool has_disturbance() const { return h.out_cols > 0 && !h.is_structurally_zero(); }

    // Evaluates the closed-loop right-hand side f + g u + h w.
    Eigen::VectorXd rhs(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                        const Eigen::VectorXd& w) const;

    // Shape checks plus the equilibrium conditions f(0)=0 and ell(0)=0 and
    // positive definiteness of R (and P when a disturbance channel exists).
    void validate() const;
};

}  // namespace hjsynth
