#pragma once

#include "hjsynth/galerkin.hpp"

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <vector>

namespace hjsynth {

// Seed policy for the iteration. ChannelScale encodes V0(x) = kappa*r*|x|^2
// (r = mean diagonal control weight), which induces u0(x) = -kappa g(x)' x
// for constant channels. GainMatrix solves for a quadratic V0 reproducing
// u0(x) = K0 x exactly.
struct InitialPolicy {
    enum class Kind { ChannelScale, GainMatrix, Coefficients };
    Kind kind = Kind::ChannelScale;
    double kappa = 0.01;
    Eigen::MatrixXd gain;      // m x d
    Eigen::VectorXd coeffs;    // n

    static InitialPolicy channel_scale(double kappa) {
        InitialPolicy p;
        p.kind = Kind::ChannelScale;
        p.kappa = kappa;
        return p;
    }
    static InitialPolicy gain_matrix(Eigen::MatrixXd K0) {
        InitialPolicy p;
        p.kind = Kind::GainMatrix;
        p.gain = std::move(K0);
        return p;
    }
    static InitialPolicy coefficients(Eigen::VectorXd c0) {
        InitialPolicy p;
        p.kind = Kind::Coefficients;
        p.coeffs = std::move(c0);
        return p;
    }
};

struct SynthesisConfig {
    double epsilon = 1e-6;
    int max_outer = 200;
    int max_inner = 200;
    double gamma = infinite_gamma();  // infinite selects the disturbance-free design
    InitialPolicy initial;
    int quad_order = 0;
    double divergence_guard = 1e12;  // abort when |c| exceeds this
};

struct ValueFunction {
    MonomialBasis basis;
    Eigen::VectorXd coeffs;
    Hyperrectangle domain;
    double gamma = infinite_gamma();  // attenuation level used for synthesis

    double value(const Eigen::VectorXd& x) const { return eval_combination(basis, coeffs, x); }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
        return eval_combination_gradient(basis, coeffs, x);
    }
};

struct FeedbackLaw {
    enum class Kind { Control, Disturbance };
    Kind kind = Kind::Control;
    ValueFunction vf;
    SeparableMap channel;      // g for control, h for disturbance
    Eigen::MatrixXd weight;    // R or P
    double gamma = infinite_gamma();

    int output_dim() const { return channel.out_cols; }
    Eigen::VectorXd eval(const Eigen::VectorXd& x) const;
};

struct PolicyIterationReport {
    enum class Failure { None, InnerStalled, OuterMaxed, Diverged };

    int outer_iterations = 0;          // disturbance passes
    int total_inner_iterations = 0;    // policy-evaluation solves, all passes
    std::vector<double> update_norms;  // coefficient update per solve
    std::vector<double> outer_update_norms;  // value change per disturbance pass
    bool converged = false;
    Failure failure = Failure::None;
    std::vector<std::string> condition_warnings;
    double wall_seconds = 0.0;

    std::string failure_text() const;
};

struct PolicyIterationResult {
    ValueFunction vf;
    PolicyIterationReport report;
};

// Disturbance-free synthesis (policy iteration on the value equation with the
// attenuation terms absent).
PolicyIterationResult hjb_policy_iteration(const ControlSystem& sys, const MonomialBasis& basis,
                                           const SynthesisConfig& cfg);
PolicyIterationResult hjb_policy_iteration(const GalerkinSystem& gs, const SynthesisConfig& cfg);

// Robust synthesis: bilevel policy iteration. The outer level updates the
// worst-case disturbance starting from w = 0; each pass runs the control
// policy iteration to convergence from the seed policy with the disturbance
// frozen.
PolicyIterationResult hji_policy_iteration(const ControlSystem& sys, const MonomialBasis& basis,
                                           const SynthesisConfig& cfg);
PolicyIterationResult hji_policy_iteration(const GalerkinSystem& gs, const SynthesisConfig& cfg);

// u(x) = -1/2 R^-1 g(x)' DV(x)
FeedbackLaw feedback_control(const ValueFunction& vf, const ControlSystem& sys);
// w(x) = 1/(2 gamma^2) P^-1 h(x)' DV(x)
FeedbackLaw feedback_disturbance(const ValueFunction& vf, const ControlSystem& sys, double gamma);

struct StabilizationProbe {
    std::vector<Eigen::VectorXd> states;  // empty selects domain-scaled defaults
    double horizon = 5.0;
    double decay_tol = 0.1;
    double dt = 1e-3;
};

// True when, for every probe state, the undisturbed closed loop decays to
// decay_tol of the initial norm within the horizon without leaving the domain.
bool stabilization_check(const ControlSystem& sys, const FeedbackLaw& u_law,
                         const std::vector<Eigen::VectorXd>& initial_states, double horizon,
                         double decay_tol, double dt = 1e-3);

struct BisectionStep {
    double gamma = 0.0;
    bool converged = false;
    bool stabilized = false;
    double lo = 0.0, hi = 0.0;  // bracket after the step
};

struct GammaStarOptions {
    double bisect_tol = 1e-3;  // relative bracket width
    StabilizationProbe probe;
    SynthesisConfig synthesis;
    bool widened_warning = false;  // set on return when lo was already feasible
};

// Smallest attenuation level at which the nested iteration converges to a
// stabilizing law, located by bisection on [lo, hi]. Requires hi feasible;
// when lo is feasible too, returns lo and flags opts.widened_warning.
double estimate_gamma_star(const GalerkinSystem& gs, double lo, double hi, GammaStarOptions& opts,
                           std::vector<BisectionStep>* trace = nullptr);
double estimate_gamma_star(const ControlSystem& sys, const MonomialBasis& basis, double lo,
                           double hi, GammaStarOptions& opts,
                           std::vector<BisectionStep>* trace = nullptr);

// Versioned binary round-trip of a value function (little-endian payload).
void save_value_function(const std::string& path, const ValueFunction& vf);
ValueFunction load_value_function(const std::string& path);

}  // namespace hjsynth
