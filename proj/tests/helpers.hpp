#pragma once

#include <random>
#include <string>

#include "cbf/controller.hpp"
#include "cbf/model.hpp"

namespace testutil {

// Double integrator confined to the unit disk: f = (x2, 0), g = (0, 1).
inline const char* kDoubleIntegratorJson = R"({
  "n": 2, "m": 1,
  "f": ["x2", "0"],
  "G": [["0", "1"]],
  "h": "1 - x1^2 - x2^2",
  "alpha": {"family": "linear", "k1": 1.0},
  "domain_box": [[-1.2, 1.2], [-1.2, 1.2]]
})";

// Same dynamics with input gain x2^2: the filter loses boundedness at (+-1, 0).
inline const char* kQuadraticGainJson = R"({
  "n": 2, "m": 1,
  "f": ["x2", "0"],
  "G": [["0", "x2^2"]],
  "h": "1 - x1^2 - x2^2",
  "alpha": {"family": "linear", "k1": 1.0},
  "domain_box": [[-1.2, 1.2], [-1.2, 1.2]]
})";

// Fully actuated single integrator: grad h G never vanishes on the boundary.
inline const char* kSingleIntegratorJson = R"({
  "n": 2, "m": 2,
  "f": ["0", "0"],
  "G": [["1", "0"], ["0", "1"]],
  "h": "1 - x1^2 - x2^2",
  "alpha": {"family": "linear", "k1": 1.0},
  "domain_box": [[-1.2, 1.2], [-1.2, 1.2]]
})";

inline cbf::Model model_from(const char* json_text) {
  return cbf::Model::load(nlohmann::json::parse(json_text));
}

inline cbf::Model double_integrator() { return model_from(kDoubleIntegratorJson); }
inline cbf::Model quadratic_gain() { return model_from(kQuadraticGainJson); }
inline cbf::Model single_integrator() { return model_from(kSingleIntegratorJson); }

/// Same disk described through a different barrier with parallel gradient.
inline cbf::Model double_integrator_exp_h() {
  auto doc = nlohmann::json::parse(kDoubleIntegratorJson);
  doc["h"] = "exp(1 - x1^2 - x2^2) - 1";
  return cbf::Model::load(doc);
}

/// Same barrier under a steeper class-kappa rate.
inline cbf::Model double_integrator_cubic_alpha() {
  auto doc = nlohmann::json::parse(kDoubleIntegratorJson);
  doc["alpha"] = {{"family", "odd-cubic"}, {"k1", 2.0}, {"k3", 1.0}};
  return cbf::Model::load(doc);
}

inline cbf::Vector sample_in_C(const cbf::Model& model, std::mt19937_64& rng,
                               double h_min = 0.0) {
  for (int tries = 0; tries < 100000; ++tries) {
    const cbf::Vector x = model.box().sample(rng);
    if (model.h(x) >= h_min) return x;
  }
  throw std::runtime_error("could not sample the safe set");
}

/// Brute-force min-norm oracle: feasibility is probed directly from the
/// inequality N + lgh.u >= 0, first by a dense scan over a ball known to
/// contain the optimum, then by bisection along the constraint normal. It
/// never touches the closed-form controller path.
struct OracleResult {
  cbf::Vector u;
  double scan_best_norm = 0.0;
};

inline OracleResult min_norm_oracle(const cbf::Model& model,
                                    const cbf::Vector& x, double ball = 10.0) {
  const double N = model.N(x);
  const cbf::Vector lgh = model.lgh(x);
  const int m = model.m();
  const auto feasible = [&](const cbf::Vector& u) {
    return N + lgh.dot(u) >= 0.0;
  };

  OracleResult out;
  if (feasible(cbf::Vector::Zero(m))) {
    out.u = cbf::Vector::Zero(m);
    out.scan_best_norm = 0.0;
    return out;
  }

  // Dense scan (grid for m = 1, otherwise seeded random directions).
  double best = std::numeric_limits<double>::infinity();
  if (m == 1) {
    const int steps = 20001;
    for (int i = 0; i < steps; ++i) {
      cbf::Vector u(1);
      u[0] = -ball + 2.0 * ball * i / (steps - 1);
      if (feasible(u)) best = std::min(best, u.norm());
    }
  } else {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 200000; ++i) {
      cbf::Vector u(m);
      for (int j = 0; j < m; ++j) u[j] = gauss(rng);
      u *= ball * std::pow(std::uniform_real_distribution<double>(0, 1)(rng),
                           1.0 / m) /
           u.norm();
      if (feasible(u)) best = std::min(best, u.norm());
    }
  }
  out.scan_best_norm = best;

  // Bisection along the constraint normal for the exact active point.
  const cbf::Vector d = lgh / lgh.norm();
  double lo = 0.0, hi = ball;
  if (!feasible(hi * d)) throw std::runtime_error("oracle ball too small");
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid * d))
      hi = mid;
    else
      lo = mid;
  }
  out.u = hi * d;
  return out;
}

}  // namespace testutil
