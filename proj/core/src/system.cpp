#include "hjsynth/system.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

namespace hjsynth {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

bool spd(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) return false;
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) return false;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    return llt.info() == Eigen::Success;
}

}  // namespace

Eigen::VectorXd ControlSystem::rhs(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                   const Eigen::VectorXd& w) const {
    Eigen::VectorXd dx(dim());
    for (int i = 0; i < dim(); ++i) dx[i] = f.entry(i, 0).eval(x);
    if (control_dim() > 0 && u.size() > 0) dx += g.eval(x) * u;
    if (disturbance_dim() > 0 && w.size() > 0) dx += h.eval(x) * w;
    return dx;
}

void ControlSystem::validate() const {
    const int d = dim();
    require(d >= 1, "ControlSystem: state dimension must be >= 1");
    require(f.out_rows == d && f.out_cols == 1, "ControlSystem: f must be d x 1");
    require(g.input_dim == d && g.out_rows == d, "ControlSystem: g must map d states to d x m");
    require(h.out_cols == 0 || (h.input_dim == d && h.out_rows == d),
            "ControlSystem: h must map d states to d x p");
    require(ell.dim == d, "ControlSystem: ell dimension mismatch");
    require(domain.dim() == d, "ControlSystem: domain dimension mismatch");
    require(R.rows() == g.out_cols && R.cols() == g.out_cols, "ControlSystem: R must be m x m");
    require(spd(R), "ControlSystem: R must be symmetric positive definite");
    if (h.out_cols > 0) {
        require(P.rows() == h.out_cols && P.cols() == h.out_cols, "ControlSystem: P must be p x p");
        require(spd(P), "ControlSystem: P must be symmetric positive definite");
    }

    const Eigen::VectorXd origin = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < d; ++i) {
        const double fi = f.entry(i, 0).eval(origin);
        if (std::abs(fi) > 1e-10)
            throw std::invalid_argument("ControlSystem: f(0) != 0, the origin is not an equilibrium");
    }
    if (std::abs(ell.eval(origin)) > 1e-10)
        throw std::invalid_argument("ControlSystem: ell(0) != 0");
}

}  // namespace hjsynth
