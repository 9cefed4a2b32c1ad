#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "cbf/controller.hpp"
#include "cbf/gauss_newton.hpp"
#include "cbf/model.hpp"

namespace cbf {

/// Minimum gradient norm for a usable boundary point; below this the barrier
/// violates the nonvanishing-gradient requirement.
inline constexpr double kGradFloor = 1e-6;

/// A candidate discontinuity point: h, grad h . f and every grad h . g_i all
/// vanish there.
struct ZPoint {
  Vector x;
  double res_h = 0.0;      // h(x)
  double res_nf = 0.0;     // grad h(x) . f(x)
  double res_lgh = 0.0;    // ||grad h(x) G(x)||
  int basin_count = 0;     // multistart seeds that converged into this cluster
};

struct ZsetOptions {
  int seeds = 0;           // 0 -> 64 for n <= 2, 512 otherwise
  double tol = 1e-10;      // convergence: stacked residual norm < tol
  int scan_steps = 96;     // intervals per coordinate line when seeding
  int max_iters = 80;
};

/// Newton projection of x onto the level set {h = level} along grad h.
inline std::optional<Vector> project_to_level(const Model& model, Vector x,
                                              double level,
                                              int max_iters = 60,
                                              double tol = 0.0) {
  if (tol <= 0.0) tol = 1e-12 * std::max(1.0, std::abs(level));
  for (int i = 0; i < max_iters; ++i) {
    const double hv = model.h(x);
    if (std::abs(hv - level) < tol) return x;
    const Vector gh = model.grad_h(x);
    const double gn2 = gh.squaredNorm();
    if (gn2 < kGradFloor * kGradFloor) return std::nullopt;
    x += ((level - hv) / gn2) * gh;
    if (!x.allFinite()) return std::nullopt;
  }
  return std::abs(model.h(x) - level) < tol ? std::optional<Vector>(x)
                                            : std::nullopt;
}

/// Seeds on the boundary of the safe set, found by scanning coordinate lines
/// of the domain box for sign changes of h and bisecting each crossing.
inline std::vector<Vector> boundary_seeds(const Model& model, int target) {
  const int n = model.n();
  const auto& box = model.box();
  std::vector<Vector> seeds;

  const int lines_per_axis = std::max(1, (target + 2 * n - 1) / (2 * n));
  const int side =
      n == 1 ? 1
             : std::max(1, static_cast<int>(std::ceil(std::pow(
                               double(lines_per_axis), 1.0 / (n - 1)))));

  for (int axis = 0; axis < n; ++axis) {
    // Grid over the remaining coordinates; offsets keep lines interior.
    std::size_t cross_count = 1;
    for (int d = 0; d < n - 1; ++d) cross_count *= static_cast<std::size_t>(side);

    for (std::size_t c = 0; c < cross_count; ++c) {
      Vector x(n);
      std::size_t rem = c;
      for (int d = 0; d < n; ++d) {
        if (d == axis) continue;
        const int id = static_cast<int>(rem % static_cast<std::size_t>(side));
        rem /= static_cast<std::size_t>(side);
        const auto& b = box.bounds[static_cast<std::size_t>(d)];
        x[d] = b[0] + (b[1] - b[0]) * (id + 0.5) / side;
      }
      const auto& ab = box.bounds[static_cast<std::size_t>(axis)];
      const int steps = 96;
      double prev_t = ab[0];
      x[axis] = prev_t;
      double prev_h = model.h(x);
      for (int s = 1; s <= steps; ++s) {
        const double t = ab[0] + (ab[1] - ab[0]) * s / steps;
        x[axis] = t;
        const double hv = model.h(x);
        if ((prev_h < 0.0) != (hv < 0.0)) {
          double lo = prev_t, hi = t;
          double h_lo = prev_h;
          for (int b = 0; b < 80; ++b) {
            const double mid = 0.5 * (lo + hi);
            x[axis] = mid;
            const double hm = model.h(x);
            if ((h_lo < 0.0) == (hm < 0.0)) {
              lo = mid;
              h_lo = hm;
            } else {
              hi = mid;
            }
          }
          x[axis] = 0.5 * (lo + hi);
          if (model.grad_h(x).norm() > kGradFloor) seeds.push_back(x);
        }
        prev_t = t;
        prev_h = hv;
      }
    }
  }

  if (static_cast<int>(seeds.size()) > target) {
    // Even subsample, preserving scan order for determinism.
    std::vector<Vector> picked;
    picked.reserve(static_cast<std::size_t>(target));
    for (int i = 0; i < target; ++i)
      picked.push_back(
          seeds[static_cast<std::size_t>(i) * seeds.size() / target]);
    seeds = std::move(picked);
  }
  return seeds;
}

namespace detail {

inline Vector z_residual(const Model& model, const Vector& x) {
  Vector r(2 + model.m());
  r[0] = model.h(x);
  r[1] = model.nf(x);
  const Vector l = model.lgh(x);
  for (int i = 0; i < model.m(); ++i) r[2 + i] = l[i];
  return r;
}

inline Matrix z_jacobian(const Model& model, const Vector& x) {
  Matrix J(2 + model.m(), model.n());
  J.row(0) = model.grad_h(x).transpose();
  J.row(1) = model.grad_nf(x).transpose();
  for (int i = 0; i < model.m(); ++i)
    J.row(2 + i) = model.grad_lgh(i, x).transpose();
  return J;
}

inline bool lexicographic_less(const Vector& a, const Vector& b) {
  for (int i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

}  // namespace detail

/// Multistart Gauss-Newton search for the discontinuity set on the safe-set
/// boundary. Converged points are clustered with radius 10*tol; each cluster
/// is reported once with its basin count. An empty result means no point was
/// found at this seeding density.
inline std::vector<ZPoint> locate_zset(const Model& model,
                                       const ZsetOptions& opts = {}) {
  if (opts.seeds < 0) throw Error("seed count must be >= 1");
  if (!(opts.tol > 0.0) || opts.tol > 1e-4)
    throw Error("zset tolerance must lie in (0, 1e-4]");

  const int target = opts.seeds == 0 ? (model.n() <= 2 ? 64 : 512) : opts.seeds;
  const auto seeds = boundary_seeds(model, target);

  GaussNewtonOptions gn;
  gn.tol = opts.tol;
  gn.max_iters = opts.max_iters;

  struct Cluster {
    Vector x;
    double residual;
    int count;
  };
  std::vector<Cluster> clusters;
  const double cluster_radius = 10.0 * opts.tol;

  for (const auto& seed : seeds) {
    const auto res = gauss_newton_lm(
        [&](const Vector& x) { return detail::z_residual(model, x); },
        [&](const Vector& x) { return detail::z_jacobian(model, x); }, seed, gn);
    if (!res.converged) continue;
    if (!model.box().contains(res.x, 1e-6)) continue;
    if (model.grad_h(res.x).norm() <= kGradFloor) continue;

    bool merged = false;
    for (auto& cl : clusters) {
      if ((cl.x - res.x).norm() < cluster_radius) {
        ++cl.count;
        if (res.residual_norm < cl.residual) {
          cl.x = res.x;
          cl.residual = res.residual_norm;
        }
        merged = true;
        break;
      }
    }
    if (!merged) clusters.push_back({res.x, res.residual_norm, 1});
  }

  std::sort(clusters.begin(), clusters.end(),
            [](const Cluster& a, const Cluster& b) {
              return detail::lexicographic_less(a.x, b.x);
            });

  std::vector<ZPoint> points;
  for (const auto& cl : clusters) {
    ZPoint z;
    z.x = cl.x;
    z.res_h = model.h(cl.x);
    z.res_nf = model.nf(cl.x);
    z.res_lgh = model.lgh(cl.x).norm();
    z.basin_count = cl.count;
    points.push_back(std::move(z));
  }
  return points;
}

/// Directed + symmetrized Hausdorff distance between two point sets.
/// Empty vs empty is 0; empty vs nonempty is +inf.
inline double hausdorff_distance(const std::vector<ZPoint>& a,
                                 const std::vector<ZPoint>& b) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
  const auto directed = [](const std::vector<ZPoint>& from,
                           const std::vector<ZPoint>& to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p.x - q.x).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

struct ZIndependenceReport {
  std::vector<ZPoint> z_first, z_second;
  double hausdorff = 0.0;
  bool pass = false;
};

/// Runs the Z locator under two barriers claimed to share a superlevel set
/// and compares the results. Sign agreement of the two barriers is
/// spot-checked on random samples first.
inline ZIndependenceReport verify_z_independence(const Model& first,
                                                 const Model& second,
                                                 const ZsetOptions& opts = {},
                                                 std::uint64_t seed = 42) {
  if (first.n() != second.n() || first.m() != second.m())
    throw DimensionMismatch("barriers under comparison must share dimensions");

  std::mt19937_64 rng(seed);
  for (int k = 0; k < 10000; ++k) {
    const Vector x = first.box().sample(rng);
    const double h1 = first.h(x);
    const double h2 = second.h(x);
    if (std::abs(h1) > 1e-6 && h1 * h2 < 0.0) {
      std::vector<double> state(x.data(), x.data() + x.size());
      throw SignDisagreement(
          "barriers disagree in sign at a sampled state (h1=" +
              std::to_string(h1) + ", h2=" + std::to_string(h2) + ")",
          std::move(state));
    }
  }

  ZIndependenceReport report;
  report.z_first = locate_zset(first, opts);
  report.z_second = locate_zset(second, opts);
  report.hausdorff = hausdorff_distance(report.z_first, report.z_second);
  report.pass = report.hausdorff < 1e-5;
  return report;
}

enum class Strength { EvidenceWeak, NoWeakEvidenceFound };

inline const char* to_string(Strength s) {
  return s == Strength::EvidenceWeak ? "EvidenceWeak" : "NoWeakEvidenceFound";
}

struct Witness {
  Vector x;         // exterior state where no input satisfies the condition
  double scale;     // collar distance it was found at
  double lgh_norm;  // ||grad h G|| there (< 1e-9)
  double N;         // grad h . f + alpha(h) there (< -1e-12)
};

struct StrengthReport {
  Strength classification = Strength::NoWeakEvidenceFound;
  std::vector<Witness> witnesses;
  std::vector<double> scales;
};

struct WeaknessOptions {
  std::vector<double> collar_scales;  // strictly decreasing; default geometric
  int samples_per_scale = 16;
  std::uint64_t seed = 42;
};

inline std::vector<double> default_collar_scales() {
  std::vector<double> scales;
  double s = 1e-3;
  for (int i = 0; i < 8; ++i, s *= 0.5) scales.push_back(s);
  return scales;
}

/// Searches shrinking exterior collars {-scale < h < 0} for states where the
/// barrier condition is unsatisfiable for every input. Each collar sample is
/// refined within its own level set (residuals h - level and grad h . g_i) so
/// that the measure-zero witness locus is actually reachable. The outcome is
/// sampling evidence, never a proof.
inline StrengthReport probe_weakness(const Model& model,
                                     const WeaknessOptions& opts = {}) {
  std::vector<double> scales =
      opts.collar_scales.empty() ? default_collar_scales() : opts.collar_scales;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw Error("collar scales must be positive");
    if (i > 0 && !(scales[i] < scales[i - 1]))
      throw Error("collar scales must be strictly decreasing");
  }

  StrengthReport report;
  report.scales = scales;
  const double s_min = scales.back();

  std::mt19937_64 rng(opts.seed);
  std::vector<std::vector<Vector>> projections_per_scale(scales.size());

  for (std::size_t si = 0; si < scales.size(); ++si) {
    const double scale = scales[si];
    const double level = -0.5 * scale;
    int found = 0;
    for (int attempt = 0;
         attempt < opts.samples_per_scale * 8 && found < opts.samples_per_scale;
         ++attempt) {
      const auto collar = project_to_level(model, model.box().sample(rng), level);
      if (!collar || !model.box().contains(*collar, 1e-9)) continue;

      // Slide along the level set to kill grad h . G.
      GaussNewtonOptions gn;
      gn.tol = 1e-10;
      gn.max_iters = 120;
      const auto res = gauss_newton_lm(
          [&](const Vector& x) {
            Vector r(1 + model.m());
            r[0] = model.h(x) - level;
            const Vector l = model.lgh(x);
            for (int i = 0; i < model.m(); ++i) r[1 + i] = l[i];
            return r;
          },
          [&](const Vector& x) {
            Matrix J(1 + model.m(), model.n());
            J.row(0) = model.grad_h(x).transpose();
            for (int i = 0; i < model.m(); ++i)
              J.row(1 + i) = model.grad_lgh(i, x).transpose();
            return J;
          },
          *collar, gn);
      if (!res.converged) continue;

      const Vector& x = res.x;
      const double hv = model.h(x);
      if (!(hv > -scale && hv < 0.0)) continue;
      const double lgh_norm = model.lgh(x).norm();
      const double N = model.nf(x) + model.alpha()(hv);
      if (!(lgh_norm < 1e-9 && N < -1e-12)) continue;

      // Deduplicate within the scale.
      bool fresh = true;
      for (const auto& w : report.witnesses)
        if (w.scale == scale && (w.x - x).norm() < scale * 0.1) fresh = false;
      if (!fresh) continue;

      report.witnesses.push_back({x, scale, lgh_norm, N});
      if (const auto proj = project_to_level(model, x, 0.0))
        projections_per_scale[si].push_back(*proj);
      ++found;
    }
  }

  // Weak evidence requires witnesses at every scale whose boundary
  // projections share a cluster of radius 10 * (smallest scale).
  const double radius = 10.0 * s_min;
  std::vector<Vector> centers;
  std::vector<std::vector<bool>> present;  // center -> per-scale flags
  for (std::size_t si = 0; si < scales.size(); ++si) {
    for (const auto& p : projections_per_scale[si]) {
      bool merged = false;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        if ((centers[c] - p).norm() < radius) {
          present[c][si] = true;
          merged = true;
          break;
        }
      }
      if (!merged) {
        centers.push_back(p);
        present.emplace_back(scales.size(), false);
        present.back()[si] = true;
      }
    }
  }
  for (const auto& flags : present) {
    if (std::all_of(flags.begin(), flags.end(), [](bool b) { return b; })) {
      report.classification = Strength::EvidenceWeak;
      break;
    }
  }
  return report;
}

inline nlohmann::json zset_report_json(const std::vector<ZPoint>& points) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& z : points) {
    nlohmann::json item;
    item["x"] = std::vector<double>(z.x.data(), z.x.data() + z.x.size());
    item["residuals"] = {z.res_h, z.res_nf, z.res_lgh};
    item["basin_count"] = z.basin_count;
    arr.push_back(std::move(item));
  }
  return arr;
}

inline nlohmann::json strength_report_json(const StrengthReport& report) {
  nlohmann::json doc;
  doc["classification"] = to_string(report.classification);
  nlohmann::json witnesses = nlohmann::json::array();
  for (const auto& w : report.witnesses) {
    nlohmann::json item;
    item["x"] = std::vector<double>(w.x.data(), w.x.data() + w.x.size());
    item["scale"] = w.scale;
    item["lgh_norm"] = w.lgh_norm;
    item["N"] = w.N;
    witnesses.push_back(std::move(item));
  }
  doc["witnesses"] = std::move(witnesses);
  doc["scales"] = report.scales;
  return doc;
}

}  // namespace cbf
