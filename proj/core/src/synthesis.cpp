#include "hjsynth/synthesis.hpp"

#include "hjsynth/sim.hpp"

#include <Eigen/Dense>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace hjsynth {

namespace {

// The synthesized value function solves the equation whose disturbance kernel
// is (1/(2 gamma^2)) h P^-1 h', consistent with the worst-case disturbance
// w = (1/(2 gamma^2)) P^-1 h' DV of the penalized game cost. The Newton
// linearization of that equation is exactly the nested update loop evaluated
// at sqrt(2) * gamma, which is where the policy-evaluation contractions run.
double evaluation_gamma(double gamma) {
    return std::isfinite(gamma) ? std::numbers::sqrt2_v<double> * gamma : gamma;
}

Eigen::MatrixXd constant_channel_matrix(const SeparableMap& g, const Hyperrectangle& domain) {
    const int d = g.input_dim;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd B = g.eval(zero);
    // sample a few interior points to confirm the channel is state-independent
    for (int k = 1; k <= 3; ++k) {
        Eigen::VectorXd x(d);
        for (int t = 0; t < d; ++t) {
            const Interval& iv = domain.intervals[t];
            x[t] = iv.center() + iv.half_width() * 0.17 * k * ((t + k) % 2 == 0 ? 1.0 : -1.0);
        }
        if ((g.eval(x) - B).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + B.cwiseAbs().maxCoeff()))
            throw std::invalid_argument(
                "initial policy: gain initialization requires a constant control channel");
    }
    return B;
}

// Quadratic seed V0 = x' S x with coefficients mapped onto the basis.
Eigen::VectorXd quadratic_seed(const MonomialBasis& basis, const Eigen::MatrixXd& S) {
    const int d = basis.dim();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(basis.size());
    std::vector<int> powers(d, 0);
    for (int t = 0; t < d; ++t) {
        for (int u = t; u < d; ++u) {
            const double value = t == u ? S(t, t) : S(t, u) + S(u, t);
            if (value == 0.0) continue;
            std::fill(powers.begin(), powers.end(), 0);
            powers[t] += 1;
            powers[u] += 1;
            const int pos = basis.find(powers);
            if (pos < 0)
                throw std::invalid_argument(
                    "initial policy: quadratic seed requires basis degree >= 2");
            c[pos] = value;
        }
    }
    return c;
}

Eigen::VectorXd initial_coefficients(const GalerkinSystem& gs, const InitialPolicy& init) {
    const ControlSystem& sys = gs.system();
    const MonomialBasis& basis = gs.basis();
    const int d = sys.dim();
    switch (init.kind) {
        case InitialPolicy::Kind::Coefficients: {
            if (init.coeffs.size() != basis.size())
                throw std::invalid_argument("initial policy: coefficient size mismatch");
            return init.coeffs;
        }
        case InitialPolicy::Kind::ChannelScale: {
            const double rbar = sys.R.diagonal().mean();
            return quadratic_seed(basis,
                                  Eigen::MatrixXd(init.kappa * rbar *
                                                  Eigen::MatrixXd::Identity(d, d)));
        }
        case InitialPolicy::Kind::GainMatrix: {
            const int m = sys.control_dim();
            if (init.gain.rows() != m || init.gain.cols() != d)
                throw std::invalid_argument("initial policy: gain must be m x d");
            const Eigen::MatrixXd B = constant_channel_matrix(sys.g, sys.domain);
            // Solve B' S = -R K0 for symmetric S (least squares over the
            // upper triangle), so that -1/2 R^-1 g' DV0 = K0 x exactly.
            const Eigen::MatrixXd target = -sys.R * init.gain;  // m x d
            const int nsym = d * (d + 1) / 2;
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m * d, nsym);
            Eigen::VectorXd rhs(m * d);
            auto sym_index = [&](int s, int t) {
                if (s > t) std::swap(s, t);
                return s * d - s * (s - 1) / 2 + (t - s);
            };
            for (int a = 0; a < m; ++a)
                for (int t = 0; t < d; ++t) {
                    const int row = a * d + t;
                    rhs[row] = target(a, t);
                    for (int s = 0; s < d; ++s) A(row, sym_index(s, t)) += B(s, a);
                }
            const Eigen::VectorXd sol = A.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
            if ((A * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm()))
                throw std::invalid_argument(
                    "initial policy: gain is not representable as a value-function gradient");
            Eigen::MatrixXd S(d, d);
            for (int s = 0; s < d; ++s)
                for (int t = s; t < d; ++t) {
                    S(s, t) = sol[sym_index(s, t)];
                    S(t, s) = S(s, t);
                }
            return quadratic_seed(basis, S);
        }
    }
    throw std::logic_error("initial policy: unreachable");
}

// Bilevel policy iteration. The outer level updates the worst-case
// disturbance, starting from w = 0; each outer pass freezes the disturbance
// and runs the control policy iteration to convergence, restarted from the
// seed policy. With the disturbance channel absent (or gamma infinite) a
// single pass remains and the scheme is plain control policy iteration.
//
// The loops cannot be nested the other way around: against a weakly
// stabilizing frozen control the disturbance-only game need not have a
// finite value, so iterating the disturbance to convergence first diverges
// on its very first pass.
PolicyIterationResult run_policy_iteration(const GalerkinSystem& gs, const SynthesisConfig& cfg,
                                           bool with_disturbance) {
    const auto start = std::chrono::steady_clock::now();
    if (!(cfg.epsilon > 0)) throw std::invalid_argument("policy iteration: epsilon must be positive");

    const double gamma = with_disturbance ? cfg.gamma : infinite_gamma();
    if (!(gamma > 0)) throw std::invalid_argument("policy iteration: gamma must be positive");
    const double geval = evaluation_gamma(gamma);
    const bool disturbance_active =
        with_disturbance && std::isfinite(gamma) && gs.system().has_disturbance();
    const int n = gs.size();

    PolicyIterationResult result;
    PolicyIterationReport& report = result.report;

    const Eigen::VectorXd c_seed = initial_coefficients(gs, cfg.initial);
    Eigen::VectorXd c_dist = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd c = c_seed;
    Eigen::VectorXd c_outer_prev;

    auto finish = [&](Eigen::VectorXd coeffs) {
        result.vf = ValueFunction{gs.basis(), std::move(coeffs), gs.system().domain, gamma};
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return result;
    };

    for (int outer = 1; outer <= cfg.max_outer; ++outer) {
        report.outer_iterations = outer;
        Eigen::VectorXd c_ctrl = c_seed;
        bool inner_ok = false;
        for (int j = 0; j < cfg.max_inner; ++j) {
            SolveInfo info;
            c = solve_policy_evaluation(gs, c_ctrl, c_dist, geval, &info);
            ++report.total_inner_iterations;
            if (info.ill_conditioned) {
                std::ostringstream msg;
                msg << "outer " << outer << " inner " << j << ": condition estimate "
                    << 1.0 / info.rcond;
                report.condition_warnings.push_back(msg.str());
            }
            if (!c.allFinite() || c.norm() > cfg.divergence_guard) {
                report.failure = PolicyIterationReport::Failure::Diverged;
                return finish(std::move(c_ctrl));
            }
            const double dn = (c - c_ctrl).norm();
            report.update_norms.push_back(dn);
            c_ctrl = c;
            if (dn < cfg.epsilon) {
                inner_ok = true;
                break;
            }
        }
        if (!inner_ok) {
            report.failure = PolicyIterationReport::Failure::InnerStalled;
            return finish(std::move(c));
        }
        if (!disturbance_active) {
            report.converged = true;
            return finish(std::move(c));
        }
        if (outer > 1) {
            const double dn = (c - c_outer_prev).norm();
            report.outer_update_norms.push_back(dn);
            if (dn < cfg.epsilon) {
                report.converged = true;
                return finish(std::move(c));
            }
        }
        c_outer_prev = c;
        c_dist = c;
    }
    report.failure = PolicyIterationReport::Failure::OuterMaxed;
    return finish(std::move(c));
}

}  // namespace

std::string PolicyIterationReport::failure_text() const {
    switch (failure) {
        case Failure::None: return "none";
        case Failure::InnerStalled: return "disturbance loop exceeded max_inner";
        case Failure::OuterMaxed: return "control loop exceeded max_outer";
        case Failure::Diverged: return "iterates diverged";
    }
    return "unknown";
}

PolicyIterationResult hjb_policy_iteration(const GalerkinSystem& gs, const SynthesisConfig& cfg) {
    return run_policy_iteration(gs, cfg, /*with_disturbance=*/false);
}

PolicyIterationResult hjb_policy_iteration(const ControlSystem& sys, const MonomialBasis& basis,
                                           const SynthesisConfig& cfg) {
    TableOptions topts;
    topts.quad_order = cfg.quad_order;
    return hjb_policy_iteration(make_galerkin_system(sys, basis, topts), cfg);
}

PolicyIterationResult hji_policy_iteration(const GalerkinSystem& gs, const SynthesisConfig& cfg) {
    return run_policy_iteration(gs, cfg, /*with_disturbance=*/true);
}

PolicyIterationResult hji_policy_iteration(const ControlSystem& sys, const MonomialBasis& basis,
                                           const SynthesisConfig& cfg) {
    TableOptions topts;
    topts.quad_order = cfg.quad_order;
    return hji_policy_iteration(make_galerkin_system(sys, basis, topts), cfg);
}

Eigen::VectorXd FeedbackLaw::eval(const Eigen::VectorXd& x) const {
    if (output_dim() == 0) return Eigen::VectorXd();
    const Eigen::VectorXd grad = vf.gradient(x);
    const Eigen::MatrixXd cx = channel.eval(x);
    if (kind == Kind::Control) return -0.5 * weight.ldlt().solve(cx.transpose() * grad);
    if (!std::isfinite(gamma)) return Eigen::VectorXd::Zero(output_dim());
    return weight.ldlt().solve(cx.transpose() * grad) / (2.0 * gamma * gamma);
}

FeedbackLaw feedback_control(const ValueFunction& vf, const ControlSystem& sys) {
    FeedbackLaw law;
    law.kind = FeedbackLaw::Kind::Control;
    law.vf = vf;
    law.channel = sys.g;
    law.weight = sys.R;
    return law;
}

FeedbackLaw feedback_disturbance(const ValueFunction& vf, const ControlSystem& sys, double gamma) {
    if (!(gamma > 0)) throw std::invalid_argument("feedback_disturbance: gamma must be positive");
    FeedbackLaw law;
    law.kind = FeedbackLaw::Kind::Disturbance;
    law.vf = vf;
    law.channel = sys.h;
    law.weight = sys.P;
    law.gamma = gamma;
    return law;
}

bool stabilization_check(const ControlSystem& sys, const FeedbackLaw& u_law,
                         const std::vector<Eigen::VectorXd>& initial_states, double horizon,
                         double decay_tol, double dt) {
    for (const auto& x0 : initial_states) {
        Trajectory traj;
        try {
            traj = simulate(sys, &u_law, DisturbanceSignal::zero(), x0, horizon, dt);
        } catch (const std::exception&) {
            return false;
        }
        if (traj.blow_up || traj.states.empty()) return false;
        for (const auto& x : traj.states)
            if (!sys.domain.contains(x)) return false;
        const double n0 = x0.norm();
        const double nT = traj.states.back().norm();
        if (n0 == 0.0) {
            if (nT > 1e-12) return false;
        } else if (nT >= decay_tol * n0) {
            return false;
        }
    }
    return true;
}

namespace {

std::vector<Eigen::VectorXd> default_probe_states(const Hyperrectangle& domain) {
    const int d = domain.dim();
    std::vector<Eigen::VectorXd> states;
    for (int t = 0; t < d; ++t) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
        x[t] = 0.5 * domain.intervals[t].half_width();
        states.push_back(x);
    }
    Eigen::VectorXd mixed(d);
    for (int t = 0; t < d; ++t)
        mixed[t] = 0.25 * domain.intervals[t].half_width() * (t % 2 == 0 ? 1.0 : -1.0);
    states.push_back(mixed);
    return states;
}

}  // namespace

double estimate_gamma_star(const GalerkinSystem& gs, double lo, double hi, GammaStarOptions& opts,
                           std::vector<BisectionStep>* trace) {
    if (!(lo > 0) || !(hi > lo)) throw std::invalid_argument("estimate_gamma_star: bad bracket");
    const ControlSystem& sys = gs.system();
    opts.widened_warning = false;

    if (!sys.has_disturbance()) {
        // every attenuation level is feasible
        opts.widened_warning = true;
        return lo;
    }

    std::vector<Eigen::VectorXd> states =
        opts.probe.states.empty() ? default_probe_states(sys.domain) : opts.probe.states;

    auto probe = [&](double gamma) -> std::pair<bool, bool> {
        SynthesisConfig scfg = opts.synthesis;
        scfg.gamma = gamma;
        PolicyIterationResult res;
        try {
            res = hji_policy_iteration(gs, scfg);
        } catch (const SingularSystemError&) {
            return {false, false};
        }
        if (!res.report.converged) return {false, false};
        const FeedbackLaw u = feedback_control(res.vf, sys);
        const bool stab = stabilization_check(sys, u, states, opts.probe.horizon,
                                              opts.probe.decay_tol, opts.probe.dt);
        return {true, stab};
    };
    auto record = [&](double gamma, std::pair<bool, bool> r, double blo, double bhi) {
        if (trace) trace->push_back(BisectionStep{gamma, r.first, r.second, blo, bhi});
        return r.first && r.second;
    };

    auto hi_result = probe(hi);
    if (!record(hi, hi_result, lo, hi))
        throw std::runtime_error("estimate_gamma_star: upper bracket endpoint is infeasible");
    auto lo_result = probe(lo);
    if (record(lo, lo_result, lo, hi)) {
        opts.widened_warning = true;  // widen the bracket to locate the transition
        return lo;
    }

    while (hi - lo > opts.bisect_tol * hi) {
        const double mid = 0.5 * (lo + hi);
        const bool feasible = record(mid, probe(mid), lo, hi);
        if (feasible)
            hi = mid;
        else
            lo = mid;
        if (trace) {
            trace->back().lo = lo;
            trace->back().hi = hi;
        }
    }
    return 0.5 * (lo + hi);
}

double estimate_gamma_star(const ControlSystem& sys, const MonomialBasis& basis, double lo,
                           double hi, GammaStarOptions& opts, std::vector<BisectionStep>* trace) {
    TableOptions topts;
    topts.quad_order = opts.synthesis.quad_order;
    return estimate_gamma_star(make_galerkin_system(sys, basis, topts), lo, hi, opts, trace);
}

// ---------------------------------------------------------------------------
// value-function file format
// ---------------------------------------------------------------------------

namespace {
constexpr char kVfMagic[4] = {'H', 'J', 'V', 'F'};
constexpr std::uint32_t kVfVersion = 1;
constexpr std::uint32_t kOrderingGradedLex = 1;
}  // namespace

void save_value_function(const std::string& path, const ValueFunction& vf) {
    static_assert(std::endian::native == std::endian::little, "file format is little-endian");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_value_function: cannot open " + path);
    const std::uint32_t version = kVfVersion, ordering = kOrderingGradedLex;
    const std::uint32_t d = vf.basis.dim(), M = vf.basis.max_degree();
    const std::uint64_t n = vf.basis.size();
    out.write(kVfMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&ordering), sizeof(ordering));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(&M), sizeof(M));
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&vf.gamma), sizeof(double));
    for (const auto& iv : vf.domain.intervals) {
        out.write(reinterpret_cast<const char*>(&iv.lo), sizeof(double));
        out.write(reinterpret_cast<const char*>(&iv.hi), sizeof(double));
    }
    out.write(reinterpret_cast<const char*>(vf.coeffs.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    if (!out) throw std::runtime_error("save_value_function: write failed for " + path);
}

ValueFunction load_value_function(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_value_function: cannot open " + path);
    char magic[4];
    std::uint32_t version = 0, ordering = 0, d = 0, M = 0;
    std::uint64_t n = 0;
    double gamma = 0.0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&ordering), sizeof(ordering));
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    in.read(reinterpret_cast<char*>(&M), sizeof(M));
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&gamma), sizeof(double));
    if (!in || std::memcmp(magic, kVfMagic, 4) != 0)
        throw std::runtime_error("load_value_function: not a value-function file: " + path);
    if (version != kVfVersion || ordering != kOrderingGradedLex)
        throw std::runtime_error("load_value_function: unsupported version in " + path);
    ValueFunction vf;
    vf.basis = MonomialBasis(static_cast<int>(d), static_cast<int>(M));
    if (static_cast<std::uint64_t>(vf.basis.size()) != n)
        throw std::runtime_error("load_value_function: inconsistent basis size in " + path);
    std::vector<Interval> ivs;
    for (std::uint32_t t = 0; t < d; ++t) {
        double lo = 0, hi = 0;
        in.read(reinterpret_cast<char*>(&lo), sizeof(double));
        in.read(reinterpret_cast<char*>(&hi), sizeof(double));
        ivs.emplace_back(lo, hi);
    }
    vf.domain = Hyperrectangle(std::move(ivs));
    vf.gamma = gamma;
    vf.coeffs.resize(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(vf.coeffs.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("load_value_function: truncated file: " + path);
    return vf;
}

}  // namespace hjsynth
