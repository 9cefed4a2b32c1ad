#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "cbf/controller.hpp"
#include "cbf/model.hpp"
#include "cbf/zset.hpp"

namespace cbf {

enum class EventKind : std::uint8_t {
  NearZ = 0,            // ||grad h G|| < 1e-4 with N < 0
  ControlSaturated = 1, // ||u*|| exceeded the cap; input was clamped
  LeftDomainBox = 2,
  SafetyViolated = 3,   // h < -1e-6
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::NearZ: return "NearZ";
    case EventKind::ControlSaturated: return "ControlSaturated";
    case EventKind::LeftDomainBox: return "LeftDomainBox";
    case EventKind::SafetyViolated: return "SafetyViolated";
  }
  return "?";
}

inline std::uint8_t event_bit(EventKind k) {
  return static_cast<std::uint8_t>(1u << static_cast<std::uint8_t>(k));
}

/// Edge-triggered event: emitted when its condition starts holding; the
/// per-step bitmask in the trajectory tracks the full extent.
struct Event {
  double t = 0.0;
  EventKind kind = EventKind::NearZ;
  double value = 0.0;  // condition-specific datum (h, ||u||, ...)
};

struct StepControl {
  enum class Mode { Fixed, Adaptive };
  Mode mode = Mode::Fixed;
  double dt = 1e-3;       // fixed-step size
  double tol = 1e-8;      // adaptive local error tolerance
  double max_dt = 0.05;   // adaptive step cap
};

struct SimulateOptions {
  double t_final = 10.0;
  StepControl step;
  std::optional<double> u_cap;  // opt-in magnitude cap; always flagged
};

/// Closed-loop record at accepted steps. The discrete safety inequality
/// h(t_{k+1}) >= h(t_k) - alpha(h(t_k)) dt - eps_int is expected to hold at
/// every step; eps_int is stored for checking.
struct Trajectory {
  std::vector<double> t, h, N, lgh_norm;
  std::vector<Vector> x, u;             // u: applied input (after any cap)
  std::vector<std::uint8_t> flags;      // event bitmask per step
  std::vector<Event> events;
  double eps_int = 0.0;
  bool truncated = false;               // integration halted early
};

namespace detail {

struct RhsEval {
  Vector dx;
  Vector u;
  double u_norm_raw = 0.0;
  bool saturated = false;
};

inline RhsEval closed_loop_rhs(const Model& model, const Vector& x,
                               const std::optional<double>& u_cap) {
  RhsEval out;
  ControlEvaluation ev = evaluate_controller(model, x);
  Vector u = ev.u_defined ? ev.u : Vector::Zero(model.m());
  out.u_norm_raw = u.norm();
  if (u_cap && out.u_norm_raw > *u_cap) {
    u *= *u_cap / out.u_norm_raw;
    out.saturated = true;
  }
  Vector dx = model.f(x);
  for (int i = 0; i < model.m(); ++i) dx += u[i] * model.g(i, x);
  out.dx = std::move(dx);
  out.u = std::move(u);
  return out;
}

}  // namespace detail

/// Integrates xdot = f(x) + G(x) u*(x) with the min-norm filter in the loop.
/// Fixed-step classical RK4 by default; an embedded Cash-Karp 4(5) pair is
/// available. Events are checked at accepted steps only.
inline Trajectory simulate(const Model& model, const Vector& x0,
                           const SimulateOptions& opts = {}) {
  if (!(opts.t_final > 0.0)) throw Error("t_final must be positive");
  if (model.h(x0) < 0.0)
    throw InitialStateUnsafe("h(x0) = " + std::to_string(model.h(x0)) +
                             " < 0: initial state is outside the safe set");

  const bool fixed = opts.step.mode == StepControl::Mode::Fixed;
  if (fixed && !(opts.step.dt > 0.0)) throw Error("dt must be positive");
  if (!fixed && !(opts.step.tol > 0.0)) throw Error("tolerance must be positive");

  Trajectory traj;
  traj.eps_int = fixed ? 10.0 * opts.step.dt * opts.step.dt : 10.0 * opts.step.tol;

  const double runaway = 10.0 * model.box().radius();
  const Vector center = model.box().center();

  std::uint8_t prev_flags = 0;
  const auto record = [&](double t, const Vector& x,
                          const detail::RhsEval& rhs) {
    const double h = model.h(x);
    const double N = model.N(x);
    const double lgh_norm = model.lgh(x).norm();

    std::uint8_t flags = 0;
    if (lgh_norm < 1e-4 && N < 0.0) flags |= event_bit(EventKind::NearZ);
    if (rhs.saturated) flags |= event_bit(EventKind::ControlSaturated);
    if (!model.box().contains(x)) flags |= event_bit(EventKind::LeftDomainBox);
    if (h < -1e-6) flags |= event_bit(EventKind::SafetyViolated);

    for (EventKind kind : {EventKind::NearZ, EventKind::ControlSaturated,
                           EventKind::LeftDomainBox, EventKind::SafetyViolated}) {
      const std::uint8_t bit = event_bit(kind);
      if ((flags & bit) && !(prev_flags & bit)) {
        double value = 0.0;
        switch (kind) {
          case EventKind::NearZ: value = lgh_norm; break;
          case EventKind::ControlSaturated: value = rhs.u_norm_raw; break;
          case EventKind::LeftDomainBox: value = 0.0; break;
          case EventKind::SafetyViolated: value = h; break;
        }
        traj.events.push_back({t, kind, value});
      }
    }
    prev_flags = flags;

    traj.t.push_back(t);
    traj.x.push_back(x);
    traj.u.push_back(rhs.u);
    traj.h.push_back(h);
    traj.N.push_back(N);
    traj.lgh_norm.push_back(lgh_norm);
    traj.flags.push_back(flags);
  };

  const auto rhs_of = [&](const Vector& x) {
    return detail::closed_loop_rhs(model, x, opts.u_cap);
  };

  Vector x = x0;
  double t = 0.0;
  record(t, x, rhs_of(x));

  const auto rk4_step = [&](const Vector& y, double dt) {
    const Vector k1 = rhs_of(y).dx;
    const Vector k2 = rhs_of(y + 0.5 * dt * k1).dx;
    const Vector k3 = rhs_of(y + 0.5 * dt * k2).dx;
    const Vector k4 = rhs_of(y + dt * k3).dx;
    return Vector(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };

  const auto halt = [&](const Vector& y) {
    return !y.allFinite() || (y - center).norm() > runaway;
  };

  if (fixed) {
    const double dt = opts.step.dt;
    const double t_end = opts.t_final;
    long long k = 0;
    while (t < t_end - 1e-12 * std::max(1.0, t_end)) {
      const double target = std::min(t_end, static_cast<double>(k + 1) * dt);
      const Vector next = rk4_step(x, target - t);
      if (halt(next)) {
        traj.truncated = true;
        break;
      }
      x = next;
      t = target;
      ++k;
      record(t, x, rhs_of(x));
    }
    return traj;
  }

  // Cash-Karp 4(5) embedded pair.
  static const double b21 = 1.0 / 5;
  static const double b31 = 3.0 / 40, b32 = 9.0 / 40;
  static const double b41 = 3.0 / 10, b42 = -9.0 / 10, b43 = 6.0 / 5;
  static const double b51 = -11.0 / 54, b52 = 5.0 / 2, b53 = -70.0 / 27,
                      b54 = 35.0 / 27;
  static const double b61 = 1631.0 / 55296, b62 = 175.0 / 512,
                      b63 = 575.0 / 13824, b64 = 44275.0 / 110592,
                      b65 = 253.0 / 4096;
  static const double c1 = 37.0 / 378, c3 = 250.0 / 621, c4 = 125.0 / 594,
                      c6 = 512.0 / 1771;
  static const double d1 = 2825.0 / 27648, d3 = 18575.0 / 48384,
                      d4 = 13525.0 / 55296, d5 = 277.0 / 14336, d6 = 1.0 / 4;

  double dt = std::min(opts.step.max_dt, opts.t_final / 10.0);
  while (t < opts.t_final - 1e-15) {
    dt = std::min(dt, opts.t_final - t);
    const Vector k1 = rhs_of(x).dx;
    const Vector k2 = rhs_of(x + dt * (b21 * k1)).dx;
    const Vector k3 = rhs_of(x + dt * (b31 * k1 + b32 * k2)).dx;
    const Vector k4 = rhs_of(x + dt * (b41 * k1 + b42 * k2 + b43 * k3)).dx;
    const Vector k5 =
        rhs_of(x + dt * (b51 * k1 + b52 * k2 + b53 * k3 + b54 * k4)).dx;
    const Vector k6 = rhs_of(x + dt * (b61 * k1 + b62 * k2 + b63 * k3 +
                                       b64 * k4 + b65 * k5)).dx;
    const Vector y5 = x + dt * (c1 * k1 + c3 * k3 + c4 * k4 + c6 * k6);
    const Vector y4 =
        x + dt * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6);

    double err = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      const double scale = opts.step.tol * (1.0 + std::abs(x[i]));
      err = std::max(err, std::abs(y5[i] - y4[i]) / scale);
    }
    if (err <= 1.0) {
      if (halt(y5)) {
        traj.truncated = true;
        break;
      }
      x = y5;
      t += dt;
      record(t, x, rhs_of(x));
    }
    const double factor =
        err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
    dt = std::min(opts.step.max_dt, dt * std::clamp(factor, 0.2, 5.0));
    if (!(dt > 0.0) || !std::isfinite(dt)) {
      traj.truncated = true;
      break;
    }
  }
  return traj;
}

/// Contiguous time window during which the trajectory stayed within `radius`
/// of a located discontinuity point.
struct HazardWindow {
  double t_enter = 0.0;
  double t_exit = 0.0;
  int z_index = -1;
  double max_u_norm = 0.0;
  int saturated_steps = 0;
};

/// Annotates incursions of a trajectory into balls around discontinuity
/// points, reporting the worst input magnitude seen inside each window.
inline std::vector<HazardWindow> hazard_scan(const Trajectory& traj,
                                             const std::vector<ZPoint>& zpoints,
                                             double radius) {
  std::vector<HazardWindow> windows;
  if (radius <= 0.0 || zpoints.empty()) return windows;

  std::optional<HazardWindow> open;
  for (std::size_t k = 0; k < traj.t.size(); ++k) {
    int nearest = -1;
    for (std::size_t z = 0; z < zpoints.size(); ++z) {
      if ((traj.x[k] - zpoints[z].x).norm() < radius) {
        nearest = static_cast<int>(z);
        break;
      }
    }
    if (nearest >= 0) {
      if (!open) {
        open = HazardWindow{};
        open->t_enter = traj.t[k];
        open->z_index = nearest;
      }
      open->t_exit = traj.t[k];
      open->max_u_norm = std::max(open->max_u_norm, traj.u[k].norm());
      if (traj.flags[k] & event_bit(EventKind::ControlSaturated))
        ++open->saturated_steps;
    } else if (open) {
      windows.push_back(*open);
      open.reset();
    }
  }
  if (open) windows.push_back(*open);
  return windows;
}

/// CSV columns: t, x1..xn, u1..um, h, N, lgh_norm, event_flags.
inline void write_trajectory_csv(std::ostream& out, const Model& model,
                                 const Trajectory& traj) {
  out << "# event_flags bitmask: 1=NearZ 2=ControlSaturated 4=LeftDomainBox "
         "8=SafetyViolated\n";
  out << "t";
  for (int i = 1; i <= model.n(); ++i) out << ",x" << i;
  for (int i = 1; i <= model.m(); ++i) out << ",u" << i;
  out << ",h,N,lgh_norm,event_flags\n";
  for (std::size_t k = 0; k < traj.t.size(); ++k) {
    out << detail::csv_double(traj.t[k]);
    for (int i = 0; i < model.n(); ++i)
      out << "," << detail::csv_double(traj.x[k][i]);
    for (int i = 0; i < model.m(); ++i)
      out << "," << detail::csv_double(traj.u[k][i]);
    out << "," << detail::csv_double(traj.h[k]) << ","
        << detail::csv_double(traj.N[k]) << ","
        << detail::csv_double(traj.lgh_norm[k]) << ","
        << static_cast<int>(traj.flags[k]) << "\n";
  }
}

inline nlohmann::json events_json(const Trajectory& traj) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : traj.events) {
    nlohmann::json item;
    item["t"] = e.t;
    item["kind"] = to_string(e.kind);
    item["value"] = e.value;
    arr.push_back(std::move(item));
  }
  return arr;
}

}  // namespace cbf
