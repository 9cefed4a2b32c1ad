#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cbf/zset.hpp"
#include "helpers.hpp"

using Catch::Approx;

namespace {

bool near(const cbf::Vector& x, double a, double b, double tol) {
  cbf::Vector p(2);
  p << a, b;
  return (x - p).norm() < tol;
}

}  // namespace

TEST_CASE("discontinuity set of the disk examples is exactly two points") {
  for (const auto* json :
       {testutil::kDoubleIntegratorJson, testutil::kQuadraticGainJson}) {
    const cbf::Model model = testutil::model_from(json);
    cbf::ZsetOptions opts;
    opts.seeds = 64;
    opts.tol = 1e-10;
    const auto points = cbf::locate_zset(model, opts);
    REQUIRE(points.size() == 2);
    CHECK(near(points[0].x, -1.0, 0.0, 1e-6));
    CHECK(near(points[1].x, 1.0, 0.0, 1e-6));
    for (const auto& z : points) {
      // Residual invariants, recomputed from the model rather than taken
      // from the solver.
      CHECK(std::abs(model.h(z.x)) < 1e-8);
      CHECK(std::abs(model.nf(z.x)) < 1e-8);
      CHECK(model.lgh(z.x).norm() < 1e-8);
      CHECK(model.grad_h(z.x).norm() > 1e-6);
      CHECK(z.basin_count >= 1);
    }
  }
}

TEST_CASE("relative-degree-one system has an empty discontinuity set") {
  const cbf::Model model = testutil::single_integrator();

  // Premise: on the boundary, ||grad h G|| never vanishes (it equals
  // ||grad h||). Sampled check, then the locator must return empty.
  std::mt19937_64 rng(11);
  int boundary_samples = 0;
  while (boundary_samples < 10000) {
    const auto x = cbf::project_to_level(model, model.box().sample(rng), 0.0);
    if (!x) continue;
    ++boundary_samples;
    const bool degenerate =
        model.lgh(*x).norm() < 1e-9 && model.nf(*x) <= 0.0;
    REQUIRE_FALSE(degenerate);
  }
  CHECK(cbf::locate_zset(model).empty());
}

TEST_CASE("locator input validation") {
  const cbf::Model model = testutil::double_integrator();
  cbf::ZsetOptions bad_tol;
  bad_tol.tol = 1e-3;
  CHECK_THROWS_AS(cbf::locate_zset(model, bad_tol), cbf::Error);
  cbf::ZsetOptions bad_seeds;
  bad_seeds.seeds = -1;
  CHECK_THROWS_AS(cbf::locate_zset(model, bad_seeds), cbf::Error);
}

TEST_CASE("boundary seeding lands on the level set") {
  const cbf::Model model = testutil::double_integrator();
  const auto seeds = cbf::boundary_seeds(model, 64);
  CHECK(seeds.size() <= 64);
  CHECK(seeds.size() >= 32);
  for (const auto& s : seeds) CHECK(std::abs(model.h(s)) < 1e-9);
}

TEST_CASE("discontinuity set does not depend on the class-kappa rate") {
  const auto report = cbf::verify_z_independence(
      testutil::double_integrator(), testutil::double_integrator_cubic_alpha());
  CHECK(report.pass);
  CHECK(report.hausdorff < 1e-5);
  CHECK(report.z_first.size() == 2);
  CHECK(report.z_second.size() == 2);
}

TEST_CASE("discontinuity set does not depend on the barrier representation") {
  const auto report = cbf::verify_z_independence(
      testutil::double_integrator(), testutil::double_integrator_exp_h());
  CHECK(report.pass);
  CHECK(report.hausdorff < 1e-5);
}

TEST_CASE("opposite-sign barriers are rejected") {
  auto doc = nlohmann::json::parse(testutil::kDoubleIntegratorJson);
  doc["h"] = "x1^2 + x2^2 - 1";
  const cbf::Model flipped = cbf::Model::load(doc);
  CHECK_THROWS_AS(
      cbf::verify_z_independence(testutil::double_integrator(), flipped),
      cbf::SignDisagreement);
}

TEST_CASE("hausdorff distance edge cases") {
  CHECK(cbf::hausdorff_distance({}, {}) == 0.0);
  cbf::ZPoint z;
  z.x = cbf::Vector::Zero(2);
  CHECK(std::isinf(cbf::hausdorff_distance({z}, {})));
}

TEST_CASE("weakness evidence on the disk examples") {
  for (const auto* json :
       {testutil::kDoubleIntegratorJson, testutil::kQuadraticGainJson}) {
    const cbf::Model model = testutil::model_from(json);
    const auto report = cbf::probe_weakness(model);
    CHECK(report.classification == cbf::Strength::EvidenceWeak);
    REQUIRE(!report.witnesses.empty());
    for (const auto& w : report.witnesses) {
      // Witness invariants, recomputed.
      CHECK(model.lgh(w.x).norm() < 1e-9);
      CHECK(model.nf(w.x) + model.alpha()(model.h(w.x)) < -1e-12);
      CHECK(model.h(w.x) < 0.0);
      CHECK(model.h(w.x) > -w.scale);
      // Witnesses hug the two degenerate boundary points.
      const double d = std::min(near(w.x, 1.0, 0.0, 1e-2) ? 0.0 : 1.0,
                                near(w.x, -1.0, 0.0, 1e-2) ? 0.0 : 1.0);
      CHECK(d == 0.0);
    }

    // Whenever weakness evidence is found the locator must agree that the
    // discontinuity set is nonempty.
    CHECK_FALSE(cbf::locate_zset(model).empty());
  }
}

TEST_CASE("no weakness evidence for the fully actuated system") {
  const auto report = cbf::probe_weakness(testutil::single_integrator());
  CHECK(report.classification == cbf::Strength::NoWeakEvidenceFound);
  CHECK(report.witnesses.empty());
}

TEST_CASE("weakness probe validates its scales") {
  const cbf::Model model = testutil::double_integrator();
  cbf::WeaknessOptions inc;
  inc.collar_scales = {1e-4, 1e-3};
  CHECK_THROWS_AS(cbf::probe_weakness(model, inc), cbf::Error);
  cbf::WeaknessOptions nonpos;
  nonpos.collar_scales = {1e-4, 0.0};
  CHECK_THROWS_AS(cbf::probe_weakness(model, nonpos), cbf::Error);
}
