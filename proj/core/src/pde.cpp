#include "hjsynth/pde.hpp"

#include <cmath>
#include <stdexcept>

namespace hjsynth {

ParabolicProblem parabolic_preset(std::string_view name) {
    using BC = ParabolicProblem::BoundaryCondition;
    using RK = ParabolicProblem::Reaction::Kind;
    using DK = ParabolicProblem::Disturbance::Kind;
    ParabolicProblem p;
    if (name == "test1_nosource") {
        p.sigma = 0.2;
        p.advection = true;
        p.reaction.kind = RK::None;
        p.bc = BC::Dirichlet0;
        p.disturbance.kind = DK::Support;
        p.disturbance.support = Interval(0.5, 0.8);
        p.control_support = Interval(-1.0, 1.0);
        p.initial_condition = [](double xi) { return xi > 0 ? 1.0 : (xi < 0 ? -1.0 : 0.0); };
        return p;
    }
    if (name == "test1_source") {
        p.sigma = 0.2;
        p.advection = true;
        p.reaction.kind = RK::ExpSource;
        p.reaction.scale = 1.5;
        p.reaction.rate = -0.1;
        p.bc = BC::Dirichlet0;
        p.disturbance.kind = DK::Support;
        p.disturbance.support = Interval(-0.8, 0.5);
        p.control_support = Interval(-0.8, 0.5);
        p.initial_condition = [](double xi) { return xi > 0 ? 1.0 : (xi < 0 ? -1.0 : 0.0); };
        return p;
    }
    if (name == "test2_zeldovich") {
        p.sigma = 0.5;
        p.advection = false;
        p.reaction.kind = RK::Zeldovich;
        p.bc = BC::Neumann0;
        p.disturbance.kind = DK::Support;
        p.disturbance.support = Interval(-0.8, 0.5);
        p.control_support = Interval(-0.8, 0.5);
        p.initial_condition = [](double xi) {
            return std::cos(2.0 * M_PI * xi) * std::sin(M_PI * xi) + 1.0;
        };
        return p;
    }
    if (name == "test3_linear_channel") {
        p.sigma = 0.5;
        p.advection = false;
        p.reaction.kind = RK::CubicDecay;
        p.bc = BC::Neumann0;
        p.disturbance.kind = DK::StateLinear;
        p.control_support = Interval(-0.3, 0.5);
        p.initial_condition = [](double xi) { return (xi - 1) * (xi - 1) * (xi + 1) * (xi + 1); };
        return p;
    }
    if (name == "test3_cubic_channel") {
        p.sigma = 0.5;
        p.advection = false;
        p.reaction.kind = RK::None;
        p.bc = BC::Neumann0;
        p.disturbance.kind = DK::StateCubic;
        p.control_support = Interval(-0.8, 0.5);
        p.initial_condition = [](double xi) {
            return 3.0 * (xi - 1) * (xi - 1) * (xi + 1) * (xi + 1);
        };
        return p;
    }
    throw std::invalid_argument("parabolic_preset: unknown preset '" + std::string(name) + "'");
}

CollocationGrid chebyshev_grid(int d, Interval domain) {
    if (d < 1) throw std::invalid_argument("chebyshev_grid: d must be >= 1");
    CollocationGrid grid;
    grid.d = d;
    grid.domain = domain;
    const int N = d + 2;  // full grid including endpoints
    const double c = domain.center(), h = domain.half_width();
    grid.full.resize(N);
    for (int i = 0; i < N; ++i) grid.full[i] = c - h * std::cos(M_PI * i / (d + 1));
    grid.full[0] = domain.lo;
    grid.full[N - 1] = domain.hi;
    grid.interior = grid.full.segment(1, d);

    // Clenshaw-Curtis weights by integrating the Lagrange cardinal functions
    // with a high-order Gauss rule (the cardinals are polynomials of degree
    // d+1, so the quadrature below is exact).
    Eigen::VectorXd lambda(N);  // barycentric weights
    for (int j = 0; j < N; ++j) {
        const double sign = (j % 2 == 0) ? 1.0 : -1.0;
        lambda[j] = sign * ((j == 0 || j == N - 1) ? 0.5 : 1.0);
    }
    const QuadratureRule q = gauss_legendre(std::max(2 * N, 32), domain);
    grid.weights_full = Eigen::VectorXd::Zero(N);
    for (size_t k = 0; k < q.nodes.size(); ++k) {
        const double x = q.nodes[k];
        int hit = -1;
        double denom = 0.0;
        for (int j = 0; j < N; ++j) {
            const double dx = x - grid.full[j];
            if (dx == 0.0) {
                hit = j;
                break;
            }
            denom += lambda[j] / dx;
        }
        if (hit >= 0) {
            grid.weights_full[hit] += q.weights[k];
            continue;
        }
        for (int j = 0; j < N; ++j)
            grid.weights_full[j] += q.weights[k] * (lambda[j] / (x - grid.full[j])) / denom;
    }
    grid.weights_interior = grid.weights_full.segment(1, d);
    return grid;
}

Eigen::MatrixXd differentiation_matrix(const CollocationGrid& grid) {
    const int N = grid.full.size();
    Eigen::VectorXd lambda(N);
    for (int j = 0; j < N; ++j) {
        const double sign = (j % 2 == 0) ? 1.0 : -1.0;
        lambda[j] = sign * ((j == 0 || j == N - 1) ? 0.5 : 1.0);
    }
    Eigen::MatrixXd D(N, N);
    for (int i = 0; i < N; ++i) {
        double diag = 0.0;
        for (int j = 0; j < N; ++j) {
            if (i == j) continue;
            D(i, j) = (lambda[j] / lambda[i]) / (grid.full[i] - grid.full[j]);
            diag -= D(i, j);
        }
        D(i, i) = diag;
    }
    return D;
}

ReducedOperators apply_boundary_conditions(const Eigen::MatrixXd& A_full,
                                           const Eigen::MatrixXd& D_full,
                                           const CollocationGrid& grid,
                                           ParabolicProblem::BoundaryCondition bc) {
    const int d = grid.d;
    const int N = d + 2;
    if (A_full.rows() != N || D_full.rows() != N)
        throw std::invalid_argument("apply_boundary_conditions: operator size mismatch");

    ReducedOperators out;
    if (bc == ParabolicProblem::BoundaryCondition::Dirichlet0) {
        out.laplacian = A_full.block(1, 1, d, d);
        out.gradient = D_full.block(1, 1, d, d);
        return out;
    }

    // Neumann: dX/dxi = 0 at both endpoints determines the boundary values
    // from the interior ones: [D00 D0N; DN0 DNN] Xb = -D(bnd, int) Xint.
    Eigen::Matrix2d Bb;
    Bb << D_full(0, 0), D_full(0, N - 1), D_full(N - 1, 0), D_full(N - 1, N - 1);
    if (std::abs(Bb.determinant()) < 1e-12)
        throw std::runtime_error("apply_boundary_conditions: singular boundary elimination");
    Eigen::MatrixXd Bi(2, d);
    Bi.row(0) = D_full.row(0).segment(1, d);
    Bi.row(1) = D_full.row(N - 1).segment(1, d);
    const Eigen::MatrixXd E = -Bb.inverse() * Bi;  // 2 x d

    auto reduce = [&](const Eigen::MatrixXd& Op) {
        Eigen::MatrixXd interior = Op.block(1, 1, d, d);
        interior += Op.block(1, 0, d, 1) * E.row(0);
        interior += Op.block(1, N - 1, d, 1) * E.row(1);
        return interior;
    };
    out.laplacian = reduce(A_full);
    out.gradient = reduce(D_full);
    return out;
}

Eigen::VectorXd indicator_vector(const CollocationGrid& grid, Interval support) {
    Eigen::VectorXd chi = Eigen::VectorXd::Zero(grid.d);
    for (int i = 0; i < grid.d; ++i)
        if (grid.interior[i] >= support.lo && grid.interior[i] <= support.hi) chi[i] = 1.0;
    return chi;
}

Eigen::VectorXd DiscretizedSystem::sample_initial_condition(
    const std::function<double(double)>& profile) const {
    Eigen::VectorXd x0(grid.d);
    for (int i = 0; i < grid.d; ++i) x0[i] = profile(grid.interior[i]);
    return x0;
}

Eigen::VectorXd DiscretizedSystem::sample_initial_condition() const {
    if (!initial_profile)
        throw std::logic_error("sample_initial_condition: problem has no initial profile");
    return sample_initial_condition(initial_profile);
}

DiscretizedSystem discretize(const ParabolicProblem& p, int d, double state_half_width, double R,
                             double P) {
    using RK = ParabolicProblem::Reaction::Kind;
    using DK = ParabolicProblem::Disturbance::Kind;
    if (d < 1) throw std::invalid_argument("discretize: d must be >= 1");
    if (!(p.sigma > 0)) throw std::invalid_argument("discretize: sigma must be positive");

    DiscretizedSystem out;
    out.grid = chebyshev_grid(d, p.spatial_domain);
    const Eigen::MatrixXd D_full = differentiation_matrix(out.grid);
    const Eigen::MatrixXd A_full = D_full * D_full;
    const ReducedOperators ops = apply_boundary_conditions(A_full, D_full, out.grid, p.bc);
    out.laplacian = ops.laplacian;
    out.gradient = ops.gradient;

    ControlSystem sys;
    sys.domain = Hyperrectangle::centered(d, state_half_width);
    sys.f = SeparableMap(d, d, 1);
    const Eigen::MatrixXd sigA = p.sigma * ops.laplacian;
    for (int i = 0; i < d; ++i) {
        SeparableScalar& row = sys.f.entry(i, 0);
        for (int k = 0; k < d; ++k)
            row.add_single_coordinate_term(k, Factor1D::scaled_monomial(sigA(i, k), 1));
        if (p.advection) {
            // x_i * sum_k D(i,k) x_k, one two-factor term per k
            for (int k = 0; k < d; ++k) {
                if (k == i)
                    row.add_single_coordinate_term(i,
                                                   Factor1D::scaled_monomial(ops.gradient(i, i), 2));
                else
                    row.add_two_coordinate_term(i, Factor1D::monomial(1), k,
                                                Factor1D::scaled_monomial(ops.gradient(i, k), 1));
            }
        }
        switch (p.reaction.kind) {
            case RK::None:
                if (p.advection)  // keep the reaction slot so every row has 2d+1 terms
                    row.add_single_coordinate_term(i, Factor1D::scaled_monomial(0.0, 1));
                break;
            case RK::ExpSource:
                row.add_single_coordinate_term(
                    i, Factor1D::scaled_exponential(p.reaction.scale, p.reaction.rate, 1));
                break;
            case RK::Zeldovich:
                row.add_single_coordinate_term(i, Factor1D::monomial(2));
                row.add_single_coordinate_term(i, Factor1D::scaled_monomial(-1.0, 3));
                break;
            case RK::CubicDecay:
                row.add_single_coordinate_term(i, Factor1D::scaled_monomial(-1.0, 3));
                break;
        }
    }

    out.control_injection = indicator_vector(out.grid, p.control_support);
    sys.g = SeparableMap::constant_column(d, out.control_injection);

    switch (p.disturbance.kind) {
        case DK::None:
            sys.h = SeparableMap::zero(d, d, 0);
            break;
        case DK::Support:
            out.disturbance_injection = indicator_vector(out.grid, p.disturbance.support);
            sys.h = SeparableMap::constant_column(d, out.disturbance_injection);
            break;
        case DK::StateLinear:
            sys.h = SeparableMap(d, d, 1);
            for (int i = 0; i < d; ++i)
                sys.h.entry(i, 0).add_single_coordinate_term(i, Factor1D::monomial(1));
            break;
        case DK::StateCubic:
            sys.h = SeparableMap(d, d, 1);
            for (int i = 0; i < d; ++i)
                sys.h.entry(i, 0).add_single_coordinate_term(i, Factor1D::monomial(3));
            break;
    }

    // L2 state penalty via the interior Clenshaw-Curtis weights
    sys.ell = SeparableScalar(d);
    for (int i = 0; i < d; ++i)
        sys.ell.add_single_coordinate_term(
            i, Factor1D::scaled_monomial(out.grid.weights_interior[i], 2));

    sys.R = Eigen::MatrixXd::Constant(1, 1, R);
    sys.P = Eigen::MatrixXd::Constant(1, 1, P);
    sys.validate();
    out.system = std::move(sys);
    out.initial_profile = p.initial_condition;
    return out;
}

}  // namespace hjsynth
