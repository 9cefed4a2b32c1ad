#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "cbf/model.hpp"

namespace cbf {

/// |h| below this counts as "on the boundary" for region classification.
inline constexpr double kBoundaryTol = 1e-9;
/// ||grad h G|| at or below this counts as zero when detecting violations.
inline constexpr double kZeroTol = 1e-12;
/// The closed-form controller is evaluated wherever its denominator exceeds this.
inline constexpr double kDenomTol = 1e-14;
/// Allowed residual of the active constraint N + lgh.u* = 0.
inline constexpr double kActiveTol = 1e-9;

enum class Region { DPlus, DMinus, Exterior };

inline const char* to_string(Region r) {
  switch (r) {
    case Region::DPlus: return "DPlus";
    case Region::DMinus: return "DMinus";
    case Region::Exterior: return "Exterior";
  }
  return "?";
}

/// Pointwise snapshot of the safety filter at a state.
struct ControlEvaluation {
  Vector x;
  double h = 0.0;
  double N = 0.0;        // grad h . f + alpha(h)
  Vector lgh;            // (grad h G)^T, m entries
  double lgh_norm = 0.0;
  Region region = Region::DPlus;
  Vector u;              // min-norm input; NaN entries when undefined
  bool u_defined = true;
  bool cbf_violation = false;  // N < 0 with lgh numerically zero inside C
};

/// Evaluates the min-norm controller without throwing; violations and
/// undefined exterior points are flagged on the result instead.
inline ControlEvaluation classify(const Model& model, const Vector& x) {
  ControlEvaluation ev;
  ev.x = x;
  ev.h = model.h(x);
  ev.lgh = model.lgh(x);
  ev.lgh_norm = ev.lgh.norm();
  ev.N = model.nf(x) + model.alpha()(ev.h);

  const bool inside = ev.h >= -kBoundaryTol;
  ev.region = !inside          ? Region::Exterior
              : ev.N >= 0.0    ? Region::DPlus  // ties N = 0 take zero input
                               : Region::DMinus;

  const auto formula = [&]() {
    return Vector(-(ev.N / ev.lgh.squaredNorm()) * ev.lgh);
  };

  if (ev.N >= 0.0) {
    ev.u = Vector::Zero(model.m());
  } else if (inside) {
    if (ev.lgh_norm <= kZeroTol) {
      ev.cbf_violation = true;
      ev.u_defined = false;
      ev.u = Vector::Constant(model.m(), std::numeric_limits<double>::quiet_NaN());
    } else {
      ev.u = formula();
    }
  } else if (ev.lgh_norm > kDenomTol) {
    // Exterior but the closed form is still defined; used by diagnostic
    // sweeps and by ray probes that exit the safe set at second order.
    ev.u = formula();
  } else {
    ev.u_defined = false;
    ev.u = Vector::Constant(model.m(), std::numeric_limits<double>::quiet_NaN());
  }
  return ev;
}

/// Throwing variant: a violation of the barrier condition inside the safe
/// set is an error.
inline ControlEvaluation evaluate_controller(const Model& model, const Vector& x) {
  ControlEvaluation ev = classify(model, x);
  if (ev.cbf_violation) {
    std::vector<double> state(x.data(), x.data() + x.size());
    throw CBFViolation(
        "barrier condition unsatisfiable: N=" + std::to_string(ev.N) +
            " < 0 with ||grad h G||=" + std::to_string(ev.lgh_norm) +
            " at a state inside the safe set",
        std::move(state), ev.N, ev.lgh_norm);
  }
  return ev;
}

/// Membership of u in the pointwise admissible set.
inline bool feasible_set_check(const Model& model, const Vector& x, const Vector& u) {
  return model.N(x) + model.lgh(x).dot(u) >= -kZeroTol;
}

struct SweepOptions {
  int resolution = 201;          // grid points per free axis, >= 2
  std::map<int, double> fixed;   // 0-based axis -> pinned coordinate
  int jobs = 1;
};

struct SweepResult {
  std::vector<int> free_axes;            // ascending; last axis varies fastest
  std::vector<double> fixed_values;      // per model axis, NaN when free
  int resolution = 0;
  std::vector<ControlEvaluation> cells;  // row-major over free axes
  std::vector<std::size_t> violation_cells;
};

/// Row-major sweep of the controller over the domain box. Violations inside
/// the safe set are collected, not fatal.
inline SweepResult sweep_grid(const Model& model, const SweepOptions& opts) {
  if (opts.resolution < 2) throw Error("sweep resolution must be >= 2");
  SweepResult result;
  result.resolution = opts.resolution;
  result.fixed_values.assign(static_cast<std::size_t>(model.n()),
                             std::numeric_limits<double>::quiet_NaN());
  for (int axis = 0; axis < model.n(); ++axis) {
    const auto it = opts.fixed.find(axis);
    if (it == opts.fixed.end()) {
      result.free_axes.push_back(axis);
    } else {
      result.fixed_values[static_cast<std::size_t>(axis)] = it->second;
    }
  }
  if (result.free_axes.empty()) throw Error("sweep needs at least one free axis");

  const int k = static_cast<int>(result.free_axes.size());
  std::size_t total = 1;
  for (int i = 0; i < k; ++i) total *= static_cast<std::size_t>(opts.resolution);
  result.cells.resize(total);

  const auto cell_state = [&](std::size_t flat) {
    Vector x(model.n());
    for (int axis = 0; axis < model.n(); ++axis)
      x[axis] = result.fixed_values[static_cast<std::size_t>(axis)];
    std::size_t rem = flat;
    for (int i = k - 1; i >= 0; --i) {
      const int idx = static_cast<int>(rem % static_cast<std::size_t>(opts.resolution));
      rem /= static_cast<std::size_t>(opts.resolution);
      const int axis = result.free_axes[static_cast<std::size_t>(i)];
      const auto& b = model.box().bounds[static_cast<std::size_t>(axis)];
      x[axis] = b[0] + (b[1] - b[0]) * idx / (opts.resolution - 1);
    }
    return x;
  };

  const auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      result.cells[i] = classify(model, cell_state(i));
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1 || total < 1024) {
    run_range(0, total);
  } else {
    std::vector<std::thread> workers;
    const std::size_t chunk = (total + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
      const std::size_t lo = std::min(total, j * chunk);
      const std::size_t hi = std::min(total, lo + chunk);
      if (lo < hi) workers.emplace_back(run_range, lo, hi);
    }
    for (auto& w : workers) w.join();
  }

  for (std::size_t i = 0; i < total; ++i)
    if (result.cells[i].cbf_violation) result.violation_cells.push_back(i);
  return result;
}

namespace detail {

inline std::string csv_double(double v) {
  if (std::isnan(v)) return "nan";
  return format_double(v);
}

}  // namespace detail

/// CSV columns: x1..xn, h, N, lgh_norm, region, u1..um, u_norm.
/// Undefined inputs are emitted as "nan".
inline void write_sweep_csv(std::ostream& out, const Model& model,
                            const SweepResult& sweep) {
  for (int i = 1; i <= model.n(); ++i) out << "x" << i << ",";
  out << "h,N,lgh_norm,region";
  for (int i = 1; i <= model.m(); ++i) out << ",u" << i;
  out << ",u_norm\n";
  for (const auto& cell : sweep.cells) {
    for (int i = 0; i < model.n(); ++i)
      out << detail::csv_double(cell.x[i]) << ",";
    out << detail::csv_double(cell.h) << "," << detail::csv_double(cell.N)
        << "," << detail::csv_double(cell.lgh_norm) << "," << to_string(cell.region);
    for (int i = 0; i < model.m(); ++i)
      out << "," << detail::csv_double(cell.u[i]);
    const double u_norm =
        cell.u_defined ? cell.u.norm() : std::numeric_limits<double>::quiet_NaN();
    out << "," << detail::csv_double(u_norm) << "\n";
  }
}

}  // namespace cbf
