#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "cbf/controller.hpp"
#include "cbf/fd.hpp"
#include "cbf/model.hpp"

namespace cbf {

/// Residual bound for accepting a state as a discontinuity-set member.
inline constexpr double kZPointTol = 1e-6;
/// Strictness margin on c2 = row_bf . v; values in (-margin, 0] are routed to
/// Indeterminate rather than claimed as certificates.
inline constexpr double kStrictTol = 1e-9;
/// Allowed slack on c1 = row_h . v >= 0 for a certificate.
inline constexpr double kC1Tol = 1e-12;

/// Linear test data at a candidate discontinuity point: stacking row_h,
/// row_bf and rows_bG gives the (m+2) x n matrix A of the test A v = (c1, c2, 0).
struct TestMatrix {
  Vector x_bar;
  Eigen::RowVectorXd row_h;    // grad h(x_bar)
  Eigen::RowVectorXd row_bf;   // gradient of N = grad h . f + alpha(h)
  Matrix rows_bG;              // row i: gradient of grad h . g_i
  double alpha_prime0 = 0.0;

  Matrix A() const {
    Matrix a(2 + rows_bG.rows(), row_h.cols());
    a.row(0) = row_h;
    a.row(1) = row_bf;
    a.bottomRows(rows_bG.rows()) = rows_bG;
    return a;
  }
};

/// Symbolic assembly of the test matrix, cross-checked against central
/// finite differences of N and of each grad h . g_i. Throws NotAZPoint if
/// the residuals at x_bar exceed tolerance, CrossCheckFailure if symbolic and
/// numeric rows disagree.
inline TestMatrix assemble_test_matrix(const Model& model, const Vector& x_bar) {
  const double res_h = model.h(x_bar);
  const double res_nf = model.nf(x_bar);
  const double res_lgh = model.lgh(x_bar).norm();
  if (std::abs(res_h) > kZPointTol || std::abs(res_nf) > kZPointTol ||
      res_lgh > kZPointTol)
    throw NotAZPoint("state is not on the discontinuity set: residuals (h=" +
                     std::to_string(res_h) + ", nf=" + std::to_string(res_nf) +
                     ", lgh=" + std::to_string(res_lgh) + ") exceed 1e-6");

  TestMatrix T;
  T.x_bar = x_bar;
  T.alpha_prime0 = model.alpha().prime_at_zero();
  T.row_h = model.grad_h(x_bar).transpose();
  T.row_bf =
      (model.grad_nf(x_bar) + T.alpha_prime0 * model.grad_h(x_bar)).transpose();
  T.rows_bG.resize(model.m(), model.n());
  for (int i = 0; i < model.m(); ++i)
    T.rows_bG.row(i) = model.grad_lgh(i, x_bar).transpose();

  const auto check_row = [&](const Eigen::RowVectorXd& sym, const ScalarFn& fn,
                             const char* name) {
    const Vector fd = fd_gradient(fn, x_bar, 1e-5);
    const double scale = std::max(1.0, sym.cwiseAbs().maxCoeff());
    const double err = (sym.transpose() - fd).cwiseAbs().maxCoeff() / scale;
    if (!(err < 1e-5))
      throw CrossCheckFailure(std::string("symbolic row ") + name +
                              " disagrees with finite differences (relative "
                              "error " +
                              std::to_string(err) + ")");
  };
  check_row(T.row_bf,
            [&](const Vector& x) { return model.N(x); }, "beta_f");
  for (int i = 0; i < model.m(); ++i)
    check_row(T.rows_bG.row(i),
              [&, i](const Vector& x) { return model.lgh(x)[i]; }, "beta_g");
  return T;
}

enum class Boundedness { Unbounded, Bounded, Indeterminate };

inline const char* to_string(Boundedness b) {
  switch (b) {
    case Boundedness::Unbounded: return "Unbounded";
    case Boundedness::Bounded: return "Bounded";
    case Boundedness::Indeterminate: return "Indeterminate";
  }
  return "?";
}

struct BoundednessVerdict {
  Boundedness kind = Boundedness::Indeterminate;
  std::optional<Vector> certificate;  // unit direction, Unbounded only
  int kernel_dim = 0;
  Vector a, b;  // row_h and row_bf projected into kernel coordinates
};

namespace detail {

inline Matrix kernel_basis(const Matrix& B, int n) {
  Eigen::JacobiSVD<Matrix> svd(B, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double thresh = std::max(1e-10 * smax, 1e-14);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > thresh) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

inline int rank_of(const Matrix& M) {
  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double thresh = std::max(1e-10 * smax, 1e-14);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > thresh) ++rank;
  return rank;
}

}  // namespace detail

/// Decides the linear test in closed form. Within ker(rows_bG), spanned by
/// an orthonormal basis K, let a = K^T row_h^T and b = K^T row_bf^T. The
/// certificate search maximizes -b.w over unit w with a.w >= 0:
///   * a = 0 or a.b <= 0: w = -b/|b|;
///   * otherwise: w along the component of -b orthogonal to a, if nonzero.
/// If the maximum keeps c2 = b.w below the strictness margin the point is
/// Unbounded with certificate v = K w. Bounded requires the cone
/// {w : a.w >= 0, b.w <= 0} to be trivial, which happens only for k = 0 or
/// for k = 1 with a1 and b1 both away from zero and of equal sign. Everything
/// else is Indeterminate.
inline BoundednessVerdict decide_boundedness(const TestMatrix& T) {
  const int n = static_cast<int>(T.row_h.cols());
  BoundednessVerdict verdict;

  const Matrix K = detail::kernel_basis(T.rows_bG, n);
  const int k = static_cast<int>(K.cols());
  verdict.kernel_dim = k;
  if (k == 0) {
    verdict.kind = Boundedness::Bounded;
    verdict.a = Vector(0);
    verdict.b = Vector(0);
    return verdict;
  }

  const Vector a = K.transpose() * T.row_h.transpose();
  const Vector b = K.transpose() * T.row_bf.transpose();
  verdict.a = a;
  verdict.b = b;

  const double an = a.norm();
  const double bn = b.norm();

  std::optional<Vector> w;
  if (bn > 0.0) {
    if (an <= 1e-14 * std::max(1.0, T.row_h.norm())) {
      w = Vector(-b / bn);
    } else {
      const double ab = a.dot(b);
      if (ab <= 0.0) {
        w = Vector(-b / bn);
      } else {
        const Vector p = b - (ab / (an * an)) * a;
        if (p.norm() > 1e-14 * bn) w = Vector(-p / p.norm());
      }
    }
  }

  if (w) {
    const Vector v = K * (*w);
    const double c1 = T.row_h.dot(v);
    const double c2 = T.row_bf.dot(v);
    if (c2 < -kStrictTol && c1 >= -kC1Tol) {
      verdict.kind = Boundedness::Unbounded;
      verdict.certificate = v;
      return verdict;
    }
  }

  if (k == 1 && std::abs(a[0]) > kStrictTol && std::abs(b[0]) > kStrictTol &&
      a[0] * b[0] > 0.0) {
    verdict.kind = Boundedness::Bounded;
  } else {
    verdict.kind = Boundedness::Indeterminate;
  }
  return verdict;
}

enum class Inevitability { InevitablyUnbounded, NotDetermined };

inline const char* to_string(Inevitability i) {
  return i == Inevitability::InevitablyUnbounded ? "InevitablyUnbounded"
                                                 : "NotDetermined";
}

/// Rank reading of the test matrix: when the kernel projections of row_h and
/// row_bf are linearly independent, every (c1, c2) sign pattern is
/// achievable, so an unbounded controller cannot be avoided by any choice of
/// the class-kappa rate.
inline Inevitability inevitability_check(const TestMatrix& T) {
  const int n = static_cast<int>(T.row_h.cols());
  const Matrix K = detail::kernel_basis(T.rows_bG, n);
  const int k = static_cast<int>(K.cols());
  if (k < 2) return Inevitability::NotDetermined;
  Matrix M(k, 2);
  M.col(0) = K.transpose() * T.row_h.transpose();
  M.col(1) = K.transpose() * T.row_bf.transpose();
  return detail::rank_of(M) == 2 ? Inevitability::InevitablyUnbounded
                                 : Inevitability::NotDetermined;
}

enum class ProbeLabel { DPlus, DMinus, Undefined };

inline const char* to_string(ProbeLabel l) {
  switch (l) {
    case ProbeLabel::DPlus: return "DPlus";
    case ProbeLabel::DMinus: return "DMinus";
    case ProbeLabel::Undefined: return "undefined";
  }
  return "?";
}

/// Controller magnitudes sampled along x_bar + v t for shrinking t.
struct RayProbeReport {
  Vector x_bar, v;
  std::vector<double> t;        // strictly decreasing, in (0, t_max]
  std::vector<double> u_norm;   // NaN where the closed form is undefined
  std::vector<ProbeLabel> region;
  double fitted_exponent = std::numeric_limits<double>::quiet_NaN();
  bool exponent_applicable = false;  // needs >= 5 active samples
  double limsup_estimate = std::numeric_limits<double>::quiet_NaN();
};

/// Evaluates the closed-form controller along a ray. Samples are labeled by
/// the sign split of N, and the formula is evaluated wherever its denominator
/// exceeds 1e-14 -- including slightly exterior states, since tangential rays
/// may leave the safe set at second order. Throws AllUndefined when no sample
/// is evaluable.
inline RayProbeReport ray_probe(const Model& model, const Vector& x_bar,
                                const Vector& v, double t_max = 0.01,
                                int samples = 12, double ratio = 0.5) {
  if (std::abs(v.norm() - 1.0) > 1e-9)
    throw Error("ray direction must be a unit vector");
  if (samples < 8) throw Error("ray probe needs at least 8 samples");
  if (!(t_max > 0.0) || !(ratio > 0.0) || !(ratio < 1.0))
    throw Error("ray probe needs t_max > 0 and ratio in (0,1)");

  RayProbeReport report;
  report.x_bar = x_bar;
  report.v = v;

  double t = t_max;
  for (int i = 0; i < samples; ++i, t *= ratio) {
    const Vector x = x_bar + t * v;
    const double N = model.N(x);
    const double denom = model.lgh(x).norm();
    report.t.push_back(t);
    if (N >= 0.0) {
      report.region.push_back(ProbeLabel::DPlus);
      report.u_norm.push_back(0.0);
    } else if (denom > kDenomTol) {
      report.region.push_back(ProbeLabel::DMinus);
      report.u_norm.push_back(-N / denom);
    } else {
      report.region.push_back(ProbeLabel::Undefined);
      report.u_norm.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }

  bool any_defined = false;
  double limsup = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < report.u_norm.size(); ++i) {
    if (!std::isnan(report.u_norm[i])) {
      any_defined = true;
      limsup = std::max(limsup, report.u_norm[i]);
    }
  }
  if (!any_defined)
    throw AllUndefined(
        "the closed-form controller is undefined at every sample along the ray");
  report.limsup_estimate = limsup;

  // Least-squares slope of log ||u|| against log t over active samples.
  std::vector<double> lt, lu;
  for (std::size_t i = 0; i < report.t.size(); ++i) {
    if (report.region[i] == ProbeLabel::DMinus && report.u_norm[i] > 0.0) {
      lt.push_back(std::log(report.t[i]));
      lu.push_back(std::log(report.u_norm[i]));
    }
  }
  if (lt.size() >= 5) {
    const auto n = static_cast<double>(lt.size());
    double st = 0, su = 0, stt = 0, stu = 0;
    for (std::size_t i = 0; i < lt.size(); ++i) {
      st += lt[i];
      su += lu[i];
      stt += lt[i] * lt[i];
      stu += lt[i] * lu[i];
    }
    const double denom = n * stt - st * st;
    if (denom > 0.0) {
      report.fitted_exponent = (n * stu - st * su) / denom;
      report.exponent_applicable = true;
    }
  }
  return report;
}

/// Unit directions with row_h . v >= 0 (inward or tangential), evenly spread.
/// For n = 2 these sweep the closed admissible half-circle; higher dimensions
/// fall back to seeded random directions reflected into the half-space.
inline std::vector<Vector> admissible_directions(const Eigen::RowVectorXd& row_h,
                                                 int count,
                                                 std::uint64_t seed = 42) {
  const int n = static_cast<int>(row_h.cols());
  std::vector<Vector> dirs;
  if (n == 2 && row_h.norm() > 0.0) {
    const Vector normal = row_h.transpose() / row_h.norm();
    Vector tangent(2);
    tangent << -normal[1], normal[0];
    for (int i = 0; i < count; ++i) {
      const double psi = count == 1 ? 0.0 : M_PI * i / (count - 1);
      dirs.push_back(std::cos(psi) * tangent + std::sin(psi) * normal);
    }
    return dirs;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  while (static_cast<int>(dirs.size()) < count) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = gauss(rng);
    if (v.norm() < 1e-12) continue;
    v /= v.norm();
    if (row_h.dot(v) < 0.0) v = -v;
    dirs.push_back(v);
  }
  return dirs;
}

inline nlohmann::json verdict_json(const TestMatrix& T,
                                   const BoundednessVerdict& verdict,
                                   Inevitability inevitability) {
  nlohmann::json doc;
  doc["x_bar"] =
      std::vector<double>(T.x_bar.data(), T.x_bar.data() + T.x_bar.size());
  const Matrix A = T.A();
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < A.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(std::move(row));
  }
  doc["A"] = std::move(rows);
  doc["alpha_prime0"] = T.alpha_prime0;
  doc["kind"] = to_string(verdict.kind);
  if (verdict.certificate) {
    doc["certificate_v"] = std::vector<double>(
        verdict.certificate->data(),
        verdict.certificate->data() + verdict.certificate->size());
  } else {
    doc["certificate_v"] = nullptr;
  }
  doc["kernel_dim"] = verdict.kernel_dim;
  doc["diagnostics"] = {
      {"a", std::vector<double>(verdict.a.data(), verdict.a.data() + verdict.a.size())},
      {"b", std::vector<double>(verdict.b.data(), verdict.b.data() + verdict.b.size())}};
  doc["inevitability"] = to_string(inevitability);
  doc["caveat"] = "straight-line directions only";
  return doc;
}

inline nlohmann::json probe_json(const RayProbeReport& report) {
  nlohmann::json doc;
  doc["x_bar"] = std::vector<double>(report.x_bar.data(),
                                     report.x_bar.data() + report.x_bar.size());
  doc["v"] =
      std::vector<double>(report.v.data(), report.v.data() + report.v.size());
  doc["t"] = report.t;
  nlohmann::json u = nlohmann::json::array();
  for (double un : report.u_norm) {
    if (std::isnan(un))
      u.push_back(nullptr);
    else
      u.push_back(un);
  }
  doc["u_norm"] = std::move(u);
  nlohmann::json regions = nlohmann::json::array();
  for (ProbeLabel l : report.region) regions.push_back(to_string(l));
  doc["region"] = std::move(regions);
  if (report.exponent_applicable)
    doc["exponent"] = report.fitted_exponent;
  else
    doc["exponent"] = nullptr;
  doc["limsup_estimate"] = report.limsup_estimate;
  return doc;
}

}  // namespace cbf
