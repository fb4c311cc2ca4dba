#pragma once

#include "hjsynth/system.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <string_view>

namespace hjsynth {

// One-dimensional parabolic control problem
//   dX/dt = sigma Xss [+ X Xs] [+ reaction(X)] + disturbance + control
// on a spatial interval, semi-discretized at Chebyshev collocation points.
struct ParabolicProblem {
    struct Reaction {
        enum class Kind { None, ExpSource, Zeldovich, CubicDecay };
        Kind kind = Kind::None;
        double scale = 1.5;  // ExpSource: scale * X * exp(rate * X)
        double rate = -0.1;
    };
    struct Disturbance {
        enum class Kind { None, Support, StateLinear, StateCubic };
        Kind kind = Kind::None;
        Interval support{-1.0, 1.0};  // Support kind only
    };
    enum class BoundaryCondition { Dirichlet0, Neumann0 };

    double sigma = 0.2;
    bool advection = false;  // X * dX/dxi term
    Reaction reaction;
    BoundaryCondition bc = BoundaryCondition::Dirichlet0;
    Disturbance disturbance;
    Interval control_support{-1.0, 1.0};
    Interval spatial_domain{-1.0, 1.0};
    std::function<double(double)> initial_condition = [](double) { return 0.0; };
};

// Named problems: test1_nosource, test1_source, test2_zeldovich,
// test3_linear_channel, test3_cubic_channel.
ParabolicProblem parabolic_preset(std::string_view name);

struct CollocationGrid {
    int d = 0;                       // interior points
    Eigen::VectorXd interior;        // xi_i = -cos(pi i / (d+1)), i = 1..d, mapped
    Eigen::VectorXd full;            // endpoints included, size d+2
    Eigen::VectorXd weights_full;    // Clenshaw-Curtis weights on full nodes
    Eigen::VectorXd weights_interior;
    Interval domain{-1.0, 1.0};
};

CollocationGrid chebyshev_grid(int d, Interval domain = Interval(-1.0, 1.0));

// First-derivative collocation matrix on the full grid (barycentric form with
// the negative-sum trick on the diagonal). Exact on polynomials of degree
// d + 1 sampled at the nodes.
Eigen::MatrixXd differentiation_matrix(const CollocationGrid& grid);

// Reduce full-grid operators to the interior unknowns. Dirichlet deletes the
// boundary rows and columns; Neumann solves the two boundary-derivative
// equations for the boundary values and eliminates them.
struct ReducedOperators {
    Eigen::MatrixXd laplacian;  // d x d
    Eigen::MatrixXd gradient;   // d x d
};
ReducedOperators apply_boundary_conditions(const Eigen::MatrixXd& A_full,
                                           const Eigen::MatrixXd& D_full,
                                           const CollocationGrid& grid,
                                           ParabolicProblem::BoundaryCondition bc);

// chi_support sampled at the interior nodes (1 inside, 0 outside).
Eigen::VectorXd indicator_vector(const CollocationGrid& grid, Interval support);

struct DiscretizedSystem {
    ControlSystem system;
    CollocationGrid grid;
    Eigen::MatrixXd laplacian;  // reduced, already scaled by sigma in system.f
    Eigen::MatrixXd gradient;   // reduced
    Eigen::VectorXd control_injection;      // B
    Eigen::VectorXd disturbance_injection;  // C (Support kind; empty otherwise)
    std::function<double(double)> initial_profile;

    Eigen::VectorXd sample_initial_condition(const std::function<double(double)>& profile) const;
    Eigen::VectorXd sample_initial_condition() const;  // the problem's own profile
};

// Collocation of the problem on d interior points. The state domain is the
// box (-state_half_width, state_half_width)^d; R and P are scalar weights of
// the single control and disturbance channels.
DiscretizedSystem discretize(const ParabolicProblem& p, int d, double state_half_width = 2.0,
                             double R = 1.0, double P = 1.0);

}  // namespace hjsynth
