#pragma once

#include "hjsynth/basis.hpp"
#include "hjsynth/system.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>

namespace hjsynth {

struct TableOptions {
    int quad_order = 0;  // 0 selects max(2M + 4, 16)
    bool use_cache = false;
    std::string cache_dir = ".hjsynth_cache";
};

class SingularSystemError : public std::runtime_error {
public:
    SingularSystemError(const std::string& what, double condition)
        : std::runtime_error(what), condition_estimate(condition) {}
    double condition_estimate;
};

// Precomputed 1D integral tables for one (system, basis, quadrature order)
// triple. Construction performs every integral the assembly of the policy
// evaluation system needs; the tables are immutable afterwards and safe to
// share across threads. Copies are shallow.
class IntegralTables {
public:
    const ControlSystem& system() const;
    const MonomialBasis& basis() const;
    int quad_order() const;
    bool cache_hit() const;
    std::uint64_t fingerprint() const;  // 0 when the system is not hashable

    struct Impl;
    std::shared_ptr<Impl> impl;
};

IntegralTables build_tables(const ControlSystem& sys, const MonomialBasis& basis,
                            const TableOptions& options = {});

// Advection-free projection matrix F(i,j) = <Dphi_j' f, phi_i>.
const Eigen::MatrixXd& assemble_F(const IntegralTables& tables);
// Running-cost load vector <ell, phi_i>.
const Eigen::VectorXd& ell_vector(const IntegralTables& tables);

// Disturbance contraction: H(i,j) = 1/(2 gamma^2) sum_ab Pinv_ab
//   sum_r c_prev_r <(h_a' Dphi_j)(h_b' Dphi_r), phi_i>.
Eigen::MatrixXd assemble_H(const IntegralTables& tables, const Eigen::VectorXd& c_prev,
                           double gamma);
// Control contraction: G(i,j) = -1/2 sum_ab Rinv_ab
//   sum_r c_ctrl_r <(g_a' Dphi_j)(g_b' Dphi_r), phi_i>.
Eigen::MatrixXd assemble_G(const IntegralTables& tables, const Eigen::VectorXd& c_ctrl);
// Load vector b_i = -<ell + |u|_R^2 - gamma^2 |w|_P^2, phi_i> with u, w
// induced by c_ctrl and c_prev.
Eigen::VectorXd assemble_rhs(const IntegralTables& tables, const Eigen::VectorXd& c_ctrl,
                             const Eigen::VectorXd& c_prev, double gamma);

struct GalerkinSystem {
    IntegralTables tables;

    const ControlSystem& system() const { return tables.system(); }
    const MonomialBasis& basis() const { return tables.basis(); }
    int size() const { return tables.basis().size(); }

    const Eigen::MatrixXd& F() const { return assemble_F(tables); }
    const Eigen::VectorXd& ell() const { return ell_vector(tables); }
    Eigen::MatrixXd H(const Eigen::VectorXd& c_prev, double gamma) const {
        return assemble_H(tables, c_prev, gamma);
    }
    Eigen::MatrixXd G(const Eigen::VectorXd& c_ctrl) const { return assemble_G(tables, c_ctrl); }
    Eigen::VectorXd rhs(const Eigen::VectorXd& c_ctrl, const Eigen::VectorXd& c_prev,
                        double gamma) const {
        return assemble_rhs(tables, c_ctrl, c_prev, gamma);
    }
};

GalerkinSystem make_galerkin_system(const ControlSystem& sys, const MonomialBasis& basis,
                                    const TableOptions& options = {});

struct SolveInfo {
    double rcond = 0.0;
    double residual = 0.0;
    bool ill_conditioned = false;  // condition estimate above 1e12
};

// Solves (F + H(c_prev) + G(c_ctrl)) c = b by dense LU with partial pivoting.
// Guarantees |A c - b| <= 1e-10 |b| or throws SingularSystemError with the
// condition estimate.
Eigen::VectorXd solve_policy_evaluation(const GalerkinSystem& gs, const Eigen::VectorXd& c_ctrl,
                                        const Eigen::VectorXd& c_prev, double gamma,
                                        SolveInfo* info = nullptr);

// Max absolute pointwise residual of the linearized value equation
//   DV'(f + g u + h w) + ell + |u|_R^2 - gamma^2 |w|_P^2
// over `samples` uniform random points of the domain. Diagnostic only; it
// does not share the table-based assembly path.
double residual_check(const ControlSystem& sys, const MonomialBasis& basis,
                      const Eigen::VectorXd& c, const Eigen::VectorXd& c_ctrl,
                      const Eigen::VectorXd& c_prev, double gamma, int samples,
                      std::uint64_t seed = 0x5eed5eedULL);

}  // namespace hjsynth
