#include "hjsynth/sim.hpp"

#include "hjsynth/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hjsynth {

DisturbanceSignal DisturbanceSignal::zero() { return DisturbanceSignal{}; }

DisturbanceSignal DisturbanceSignal::sinusoid(double eta, double omega) {
    DisturbanceSignal s;
    s.kind = Kind::Sinusoid;
    s.eta = eta;
    s.omega = omega;
    return s;
}

DisturbanceSignal DisturbanceSignal::piecewise_constant(std::vector<double> breakpoints,
                                                        std::vector<double> values) {
    if (values.size() != breakpoints.size() + 1)
        throw std::invalid_argument("piecewise_constant: need one more value than breakpoints");
    for (size_t k = 1; k < breakpoints.size(); ++k)
        if (!(breakpoints[k] > breakpoints[k - 1]))
            throw std::invalid_argument("piecewise_constant: breakpoints must be increasing");
    DisturbanceSignal s;
    s.kind = Kind::PiecewiseConstant;
    s.breakpoints = std::move(breakpoints);
    s.values = std::move(values);
    return s;
}

DisturbanceSignal DisturbanceSignal::constant(double value) {
    return piecewise_constant({}, {value});
}

DisturbanceSignal DisturbanceSignal::replay(std::vector<double> times, std::vector<double> values,
                                            double kappa) {
    if (times.size() != values.size() || times.empty())
        throw std::invalid_argument("replay: times/values size mismatch");
    DisturbanceSignal s;
    s.kind = Kind::Replay;
    s.series_times = std::move(times);
    s.series_values = std::move(values);
    s.kappa = kappa;
    return s;
}

DisturbanceSignal DisturbanceSignal::composite(std::vector<double> times,
                                               std::vector<double> values, double kappa,
                                               double eta, double omega) {
    DisturbanceSignal s = replay(std::move(times), std::move(values), kappa);
    s.kind = Kind::Composite;
    s.eta = eta;
    s.omega = omega;
    return s;
}

double DisturbanceSignal::eval(double t) const {
    switch (kind) {
        case Kind::Zero: return 0.0;
        case Kind::Sinusoid: return eta * std::sin(omega * t);
        case Kind::PiecewiseConstant: {
            size_t k = 0;
            while (k < breakpoints.size() && t >= breakpoints[k]) ++k;
            return values[k];
        }
        case Kind::Replay:
        case Kind::Composite: {
            // sample-and-hold lookup of the recorded series
            double base;
            if (t <= series_times.front()) {
                base = series_values.front();
            } else if (t >= series_times.back()) {
                base = series_values.back();
            } else {
                const auto it =
                    std::upper_bound(series_times.begin(), series_times.end(), t);
                base = series_values[static_cast<size_t>(it - series_times.begin()) - 1];
            }
            double out = kappa * base;
            if (kind == Kind::Composite) out += eta * std::sin(omega * t);
            return out;
        }
    }
    return 0.0;
}

namespace {

double linearization_spectral_radius(const ControlSystem& sys) {
    const int d = sys.dim();
    const double eps = 1e-6;
    Eigen::MatrixXd J(d, d);
    Eigen::VectorXd xp = Eigen::VectorXd::Zero(d), xm = Eigen::VectorXd::Zero(d);
    for (int k = 0; k < d; ++k) {
        xp[k] = eps;
        xm[k] = -eps;
        for (int i = 0; i < d; ++i)
            J(i, k) = (sys.f.entry(i, 0).eval(xp) - sys.f.entry(i, 0).eval(xm)) / (2 * eps);
        xp[k] = 0.0;
        xm[k] = 0.0;
    }
    return J.eigenvalues().cwiseAbs().maxCoeff();
}

using ControlFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using DisturbFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

Trajectory integrate(const ControlSystem& sys, const ControlFn& u_of, const DisturbFn& w_of,
                     const Eigen::VectorXd& x0, double T, double dt, bool w_is_feedback) {
    if (!(dt > 0) || !(T > 0)) throw std::invalid_argument("simulate: T and dt must be positive");
    if (x0.size() != sys.dim()) throw std::invalid_argument("simulate: x0 dimension mismatch");

    const double rho = linearization_spectral_radius(sys);
    while (std::isfinite(rho) && dt * rho > 1.0) dt *= 0.5;

    const double blow_limit = 10.0 * sys.domain.max_half_width();
    const int steps = static_cast<int>(std::ceil(T / dt - 1e-12));

    Trajectory traj;
    traj.dt_used = dt;
    traj.times.reserve(steps + 1);
    traj.states.reserve(steps + 1);
    traj.controls.reserve(steps + 1);
    traj.disturbances.reserve(steps + 1);

    auto in_double_box = [&](const Eigen::VectorXd& x) {
        for (int t = 0; t < sys.dim(); ++t) {
            const Interval& iv = sys.domain.intervals[t];
            if (std::abs(x[t] - iv.center()) > 2.0 * iv.half_width()) return false;
        }
        return true;
    };

    Eigen::VectorXd x = x0;
    double t = 0.0;
    for (int k = 0; k <= steps; ++k) {
        const Eigen::VectorXd u = u_of(x);
        const Eigen::VectorXd w_rec = w_of(x, t);
        traj.times.push_back(t);
        traj.states.push_back(x);
        traj.controls.push_back(u);
        traj.disturbances.push_back(w_rec);
        if (k == steps) break;

        // exogenous signals are held over the step; feedback disturbances are
        // re-evaluated at the stage states like the control
        auto rhs = [&](const Eigen::VectorXd& y, double tau) {
            const Eigen::VectorXd uu = u_of(y);
            const Eigen::VectorXd ww = w_is_feedback ? w_of(y, tau) : w_rec;
            return sys.rhs(y, uu, ww);
        };
        const Eigen::VectorXd k1 = rhs(x, t);
        const Eigen::VectorXd k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt);
        const Eigen::VectorXd k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt);
        const Eigen::VectorXd k4 = rhs(x + dt * k3, t + dt);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += dt;

        if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > blow_limit) {
            traj.blow_up = true;
            break;
        }
        if (!traj.left_domain && !in_double_box(x)) traj.left_domain = true;
    }
    return traj;
}

}  // namespace

Trajectory simulate(const ControlSystem& sys, const FeedbackLaw* u_law,
                    const DisturbanceSignal& w_sig, const Eigen::VectorXd& x0, double T,
                    double dt) {
    const int m = sys.control_dim();
    const int p = sys.disturbance_dim();
    if (p == 0 && !w_sig.is_zero())
        throw std::invalid_argument("simulate: disturbance signal on a system without channel");
    if (p > 1 && !w_sig.is_zero())
        throw std::invalid_argument("simulate: scalar signals require a single disturbance channel");
    ControlFn u_of = [&](const Eigen::VectorXd& x) {
        return u_law ? u_law->eval(x) : Eigen::VectorXd::Zero(m);
    };
    DisturbFn w_of = [&](const Eigen::VectorXd&, double t) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
        if (p == 1) w[0] = w_sig.eval(t);
        return w;
    };
    return integrate(sys, u_of, w_of, x0, T, dt, /*w_is_feedback=*/false);
}

Trajectory simulate_feedback(const ControlSystem& sys, const FeedbackLaw* u_law,
                             const FeedbackLaw* w_law, const Eigen::VectorXd& x0, double T,
                             double dt) {
    const int m = sys.control_dim();
    const int p = sys.disturbance_dim();
    ControlFn u_of = [&](const Eigen::VectorXd& x) {
        return u_law ? u_law->eval(x) : Eigen::VectorXd::Zero(m);
    };
    DisturbFn w_of = [&](const Eigen::VectorXd& x, double) {
        return w_law ? w_law->eval(x) : Eigen::VectorXd::Zero(p);
    };
    return integrate(sys, u_of, w_of, x0, T, dt, /*w_is_feedback=*/true);
}

std::vector<double> l2_norm_series(const Trajectory& traj, const Eigen::VectorXd& weights) {
    std::vector<double> out;
    out.reserve(traj.states.size());
    for (const auto& x : traj.states) {
        if (x.size() != weights.size())
            throw std::invalid_argument("l2_norm_series: weight dimension mismatch");
        out.push_back(weights.dot(x.cwiseProduct(x)));
    }
    return out;
}

CostBreakdown cost_integral(const Trajectory& traj, const ControlSystem& sys, double gamma) {
    CostBreakdown cost;
    if (traj.states.empty()) return cost;
    cost.horizon_T = traj.times.back();

    const size_t n = traj.states.size();
    std::vector<double> running_state(n), running_ctrl(n), running_dist(n);
    for (size_t k = 0; k < n; ++k) {
        running_state[k] = sys.ell.eval(traj.states[k]);
        const auto& u = traj.controls[k];
        running_ctrl[k] = u.size() > 0 ? u.dot(sys.R * u) : 0.0;
        const auto& w = traj.disturbances[k];
        running_dist[k] = w.size() > 0 ? w.dot(sys.P * w) : 0.0;
    }
    for (size_t k = 0; k + 1 < n; ++k) {
        const double h = traj.times[k + 1] - traj.times[k];
        cost.state_cost += 0.5 * h * (running_state[k] + running_state[k + 1]);
        cost.control_cost += 0.5 * h * (running_ctrl[k] + running_ctrl[k + 1]);
        cost.disturbance_credit += 0.5 * h * (running_dist[k] + running_dist[k + 1]);
    }
    cost.disturbance_credit =
        std::isfinite(gamma) ? gamma * gamma * cost.disturbance_credit : 0.0;
    cost.total_J = traj.blow_up ? std::numeric_limits<double>::infinity()
                                : cost.state_cost + cost.control_cost - cost.disturbance_credit;
    return cost;
}

RecordedSignal record_feedback_signal(const ControlSystem& sys, const FeedbackLaw& drive,
                                      const FeedbackLaw& record, const Eigen::VectorXd& x0,
                                      double T, double dt) {
    const Trajectory traj = simulate(sys, &drive, DisturbanceSignal::zero(), x0, T, dt);
    RecordedSignal out;
    out.times = traj.times;
    out.values.reserve(traj.states.size());
    for (const auto& x : traj.states) {
        const Eigen::VectorXd v = record.eval(x);
        out.values.push_back(v.size() > 0 ? v[0] : 0.0);
    }
    return out;
}

RecordedSignal record_feedback_signal(const ControlSystem& sys, const FeedbackLaw& law,
                                      const Eigen::VectorXd& x0, double T, double dt) {
    return record_feedback_signal(sys, law, law, x0, T, dt);
}

ComparisonReport compare_hjb_hji(const ControlSystem& sys, const ValueFunction& v_hjb,
                                 const ValueFunction& v_hji,
                                 const std::vector<Scenario>& scenarios,
                                 const ComparisonOptions& opts) {
    const FeedbackLaw u_hjb = feedback_control(v_hjb, sys);
    const FeedbackLaw u_hji = feedback_control(v_hji, sys);

    auto verdict = [&](const Trajectory& traj, const Eigen::VectorXd& x0) {
        if (traj.blow_up || traj.states.empty()) return false;
        if (opts.norm_weights.size() > 0) {
            const double n0 = opts.norm_weights.dot(x0.cwiseProduct(x0));
            const double nT = opts.norm_weights.dot(
                traj.states.back().cwiseProduct(traj.states.back()));
            return n0 == 0.0 ? nT <= 1e-12 : nT < opts.decay_tol * opts.decay_tol * n0;
        }
        const double n0 = x0.norm();
        const double nT = traj.states.back().norm();
        return n0 == 0.0 ? nT <= 1e-12 : nT < opts.decay_tol * n0;
    };

    ComparisonReport report;
    report.scenarios.resize(scenarios.size());
    parallel_for(scenarios.size(), [&](size_t k) {
        const Scenario& sc = scenarios[k];
        ScenarioOutcome out;
        out.name = sc.name;
        out.traj_hjb = simulate(sys, &u_hjb, sc.disturbance, sc.x0, opts.T, opts.dt);
        out.traj_hji = simulate(sys, &u_hji, sc.disturbance, sc.x0, opts.T, opts.dt);
        out.cost_hjb = cost_integral(out.traj_hjb, sys, v_hjb.gamma);
        out.cost_hji = cost_integral(out.traj_hji, sys, v_hji.gamma);
        out.stabilized_hjb = verdict(out.traj_hjb, sc.x0);
        out.stabilized_hji = verdict(out.traj_hji, sc.x0);
        report.scenarios[k] = std::move(out);
    });
    return report;
}

}  // namespace hjsynth
