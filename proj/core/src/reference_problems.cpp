#include "hjsynth/reference_problems.hpp"

#include <cmath>

namespace hjsynth {

ControlSystem reference_1d_system(double gamma, double R, double P, double g, double h) {
    const double q = g * g / R - h * h / (2.0 * gamma * gamma * P);

    ControlSystem sys;
    sys.domain = Hyperrectangle::centered(1, 1.0);
    sys.f = SeparableMap::zero(1, 1, 1);
    sys.g = SeparableMap::constant_column(1, Eigen::VectorXd::Constant(1, g));
    sys.h = SeparableMap::constant_column(1, Eigen::VectorXd::Constant(1, h));
    sys.R = Eigen::MatrixXd::Constant(1, 1, R);
    sys.P = Eigen::MatrixXd::Constant(1, 1, P);

    // (q/4)(x^2 e^x + 2 x e^x + 4 x^3)^2 expanded into separable terms
    sys.ell = SeparableScalar(1);
    sys.ell.add_term({Factor1D::scaled_exponential(q / 4.0, 2.0, 4)});
    sys.ell.add_term({Factor1D::scaled_exponential(q, 2.0, 3)});
    sys.ell.add_term({Factor1D::scaled_exponential(q, 2.0, 2)});
    sys.ell.add_term({Factor1D::scaled_exponential(2.0 * q, 1.0, 5)});
    sys.ell.add_term({Factor1D::scaled_exponential(4.0 * q, 1.0, 4)});
    sys.ell.add_term({Factor1D::scaled_monomial(16.0 * q / 4.0, 6)});
    return sys;
}

double reference_1d_value(double x) { return x * x * x * x + x * x * std::exp(x); }

double reference_1d_control(double x) {
    return -0.5 * (4.0 * x * x * x + 2.0 * x * std::exp(x) + x * x * std::exp(x));
}

std::vector<ConvergenceRow> reference_1d_convergence(const std::vector<int>& degrees,
                                                     double epsilon, double kappa0) {
    const double gamma = 2.0;
    const ControlSystem sys = reference_1d_system(gamma);
    const QuadratureRule quad = gauss_legendre(48, sys.domain.intervals[0]);

    std::vector<ConvergenceRow> rows;
    for (int M : degrees) {
        const MonomialBasis basis(1, M);
        SynthesisConfig cfg;
        cfg.epsilon = epsilon;
        cfg.gamma = gamma;
        cfg.initial = InitialPolicy::channel_scale(kappa0);
        const PolicyIterationResult res = hji_policy_iteration(sys, basis, cfg);

        double num_v = 0, den_v = 0, num_u = 0, den_u = 0;
        for (size_t k = 0; k < quad.nodes.size(); ++k) {
            const double x = quad.nodes[k];
            const double w = quad.weights[k];
            Eigen::VectorXd xv(1);
            xv[0] = x;
            const double v_exact = reference_1d_value(x);
            const double u_exact = reference_1d_control(x);
            const double v_num = res.vf.value(xv);
            const double u_num = -0.5 * res.vf.gradient(xv)[0];
            num_v += w * (v_num - v_exact) * (v_num - v_exact);
            den_v += w * v_exact * v_exact;
            num_u += w * (u_num - u_exact) * (u_num - u_exact);
            den_u += w * u_exact * u_exact;
        }
        ConvergenceRow row;
        row.degree = M;
        row.error_v = std::sqrt(num_v / den_v);
        row.error_u = std::sqrt(num_u / den_u);
        row.iterations = res.report.total_inner_iterations;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace hjsynth
