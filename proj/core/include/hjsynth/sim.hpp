#pragma once

#include "hjsynth/synthesis.hpp"
#include "hjsynth/system.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace hjsynth {

// Scalar exogenous disturbance signal. Signals are sampled once per
// integration step and held constant across the step's stages, so a replayed
// recording drives the integrator exactly as the original run did.
struct DisturbanceSignal {
    enum class Kind { Zero, Sinusoid, PiecewiseConstant, Replay, Composite };

    Kind kind = Kind::Zero;
    double eta = 0.0;    // sinusoid amplitude
    double omega = 0.0;  // sinusoid frequency
    std::vector<double> breakpoints;
    std::vector<double> values;  // breakpoints.size() + 1 levels
    std::vector<double> series_times;
    std::vector<double> series_values;  // held constant past the end
    double kappa = 1.0;                 // replay scale

    static DisturbanceSignal zero();
    static DisturbanceSignal sinusoid(double eta, double omega);
    static DisturbanceSignal piecewise_constant(std::vector<double> breakpoints,
                                                std::vector<double> values);
    static DisturbanceSignal constant(double value);
    static DisturbanceSignal replay(std::vector<double> times, std::vector<double> values,
                                    double kappa = 1.0);
    // kappa * recorded + eta sin(omega t)
    static DisturbanceSignal composite(std::vector<double> times, std::vector<double> values,
                                       double kappa, double eta, double omega);

    bool is_zero() const { return kind == Kind::Zero; }
    double eval(double t) const;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
    std::vector<Eigen::VectorXd> controls;
    std::vector<Eigen::VectorXd> disturbances;
    bool blow_up = false;      // integration stopped: non-finite state or far outside the domain
    bool left_domain = false;  // state exceeded twice the domain box at some time
    double dt_used = 0.0;

    int steps() const { return static_cast<int>(times.size()); }
};

struct CostBreakdown {
    double state_cost = 0.0;          // integral of ell
    double control_cost = 0.0;        // integral of |u|_R^2
    double disturbance_credit = 0.0;  // gamma^2 integral of |w|_P^2
    double total_J = 0.0;             // state + control - credit; +inf after blow-up
    double horizon_T = 0.0;
};

// Fixed-step RK4 integration of xdot = f + g u(x) + h w(t). The step is
// halved until dt * rho(Df(0)) <= 1. Integration stops with the blow_up flag
// once the state inf-norm exceeds ten times the largest domain half-width.
Trajectory simulate(const ControlSystem& sys, const FeedbackLaw* u_law,
                    const DisturbanceSignal& w_sig, const Eigen::VectorXd& x0, double T,
                    double dt);

// Closed two-player loop: both u and w are state feedback laws.
Trajectory simulate_feedback(const ControlSystem& sys, const FeedbackLaw* u_law,
                             const FeedbackLaw* w_law, const Eigen::VectorXd& x0, double T,
                             double dt);

// Quadrature-weighted squared norm of the state per recorded time.
std::vector<double> l2_norm_series(const Trajectory& traj, const Eigen::VectorXd& weights);

// Trapezoidal cost integrals over the recorded horizon. An infinite gamma
// reports zero disturbance credit.
CostBreakdown cost_integral(const Trajectory& traj, const ControlSystem& sys, double gamma);

struct RecordedSignal {
    std::vector<double> times;
    std::vector<double> values;
};

// Simulates the undisturbed closed loop under `drive` and records the scalar
// output of `record` along the trajectory.
RecordedSignal record_feedback_signal(const ControlSystem& sys, const FeedbackLaw& drive,
                                      const FeedbackLaw& record, const Eigen::VectorXd& x0,
                                      double T, double dt);
RecordedSignal record_feedback_signal(const ControlSystem& sys, const FeedbackLaw& law,
                                      const Eigen::VectorXd& x0, double T, double dt);

struct Scenario {
    std::string name;
    Eigen::VectorXd x0;
    DisturbanceSignal disturbance;
};

struct ScenarioOutcome {
    std::string name;
    CostBreakdown cost_hjb, cost_hji;
    bool stabilized_hjb = false, stabilized_hji = false;
    Trajectory traj_hjb, traj_hji;
};

struct ComparisonOptions {
    double T = 5.0;
    double dt = 1e-3;
    double decay_tol = 0.1;               // verdict: |x(T)| < decay_tol * |x0|
    Eigen::VectorXd norm_weights;          // optional weighted norm for verdicts
};

struct ComparisonReport {
    std::vector<ScenarioOutcome> scenarios;
};

// Runs every scenario under both feedback laws (scenarios in parallel,
// results ordered by scenario index).
ComparisonReport compare_hjb_hji(const ControlSystem& sys, const ValueFunction& v_hjb,
                                 const ValueFunction& v_hji,
                                 const std::vector<Scenario>& scenarios,
                                 const ComparisonOptions& opts);

}  // namespace hjsynth
