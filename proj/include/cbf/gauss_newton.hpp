#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>

namespace cbf {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct GaussNewtonOptions {
  double tol = 1e-10;      // convergence: ||r|| < tol
  int max_iters = 80;
  double lambda0 = 1e-3;   // initial Levenberg damping
  int polish_iters = 3;    // extra undamped steps after first convergence
};

struct GaussNewtonResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Damped Gauss-Newton for overdetermined residual systems r(x) = 0.
/// Solves (J^T J + lambda I) d = -J^T r, shrinking lambda on accepted steps.
/// After the residual first drops below tol, a few undamped steps polish the
/// point so independently started solves cluster tightly.
inline GaussNewtonResult gauss_newton_lm(const ResidualFn& residual,
                                         const JacobianFn& jacobian,
                                         const Eigen::VectorXd& x0,
                                         const GaussNewtonOptions& opts = {}) {
  GaussNewtonResult out;
  out.x = x0;
  Eigen::VectorXd r = residual(out.x);
  double rn = r.norm();
  double lambda = opts.lambda0;
  const int n = static_cast<int>(x0.size());

  const auto step = [&](double damping) {
    const Eigen::MatrixXd J = jacobian(out.x);
    const Eigen::MatrixXd H =
        J.transpose() * J + damping * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd d = H.ldlt().solve(-J.transpose() * r);
    return Eigen::VectorXd(out.x + d);
  };

  for (; out.iterations < opts.max_iters; ++out.iterations) {
    if (rn < opts.tol) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 8; ++attempt) {
      const Eigen::VectorXd trial = step(lambda);
      if (!trial.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd rt = residual(trial);
      const double rtn = rt.norm();
      if (std::isfinite(rtn) && rtn < rn) {
        out.x = trial;
        r = rt;
        rn = rtn;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;  // stalled; report whatever we reached
  }

  if (rn < opts.tol) out.converged = true;
  if (out.converged) {
    for (int i = 0; i < opts.polish_iters; ++i) {
      const Eigen::VectorXd trial = step(1e-14);
      if (!trial.allFinite()) break;
      const Eigen::VectorXd rt = residual(trial);
      if (!std::isfinite(rt.norm()) || rt.norm() >= rn) break;
      out.x = trial;
      r = rt;
      rn = rt.norm();
    }
  }
  out.residual_norm = rn;
  return out;
}

}  // namespace cbf
