// Command-line front end for the min-norm safety-filter analysis toolkit.
//
// Exit codes: 0 success; 2 system-document load failure; 3 sweep failure;
// 4 discontinuity-set search failure; 5 boundedness-test failure;
// 6 ray-probe failure; 7 simulation failure; 64 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cbf/boundedness.hpp"
#include "cbf/controller.hpp"
#include "cbf/model.hpp"
#include "cbf/simulate.hpp"
#include "cbf/version.hpp"
#include "cbf/zset.hpp"

namespace {

enum ExitCode {
  kOk = 0,
  kLoadError = 2,
  kSweepError = 3,
  kZsetError = 4,
  kBoundednessError = 5,
  kProbeError = 6,
  kSimulateError = 7,
  kUsageError = 64,
};

cbf::Vector parse_vector(const std::string& text, int expected_dim,
                         const char* what) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw cbf::Error(std::string(what) + ": cannot parse '" + item +
                       "' as a number");
    }
  }
  if (static_cast<int>(values.size()) != expected_dim)
    throw cbf::Error(std::string(what) + " must have " +
                     std::to_string(expected_dim) + " comma-separated entries");
  cbf::Vector x(expected_dim);
  for (int i = 0; i < expected_dim; ++i) x[i] = values[static_cast<std::size_t>(i)];
  return x;
}

cbf::Model load_or_exit(const std::string& spec_path) {
  try {
    return cbf::Model::load_file(spec_path);
  } catch (const std::exception& e) {
    std::cerr << "error: load: " << e.what() << "\n";
    std::exit(kLoadError);
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cbf::Error("cannot open output file '" + path + "'");
  out << content;
}

void write_json_file(const std::string& path, const nlohmann::json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

int fail_stage(const char* stage, int code, const std::exception& e) {
  std::cerr << "error: " << stage << ": " << e.what() << "\n";
  return code;
}

int default_seeds(const cbf::Model& model) { return model.n() <= 2 ? 64 : 512; }

struct AnalyzeFlags {
  std::string spec_path, out_dir;
  int seeds = 0;
  double tol = 1e-10;
  std::uint64_t seed = 42;
  int sweep_res = 201;
  int jobs = 1;
  double t_max = 0.01;
  int probe_samples = 12;
};

int run_analyze(const AnalyzeFlags& flags) {
  const cbf::Model model = load_or_exit(flags.spec_path);
  std::error_code ec;
  std::filesystem::create_directories(flags.out_dir, ec);

  nlohmann::json bundle;
  bundle["tool_version"] = cbf::kToolVersion;
  bundle["spec_schema_version"] = cbf::kSpecSchemaVersion;
  bundle["spec"] = model.document();
  bundle["seed"] = flags.seed;

  cbf::StrengthReport strength;
  try {
    cbf::WeaknessOptions wopts;
    wopts.seed = flags.seed;
    strength = cbf::probe_weakness(model, wopts);
    bundle["strength"] = cbf::strength_report_json(strength);
  } catch (const std::exception& e) {
    return fail_stage("analyze/probe-weakness", kZsetError, e);
  }

  std::vector<cbf::ZPoint> zpoints;
  try {
    cbf::ZsetOptions zopts;
    zopts.seeds = flags.seeds == 0 ? default_seeds(model) : flags.seeds;
    zopts.tol = flags.tol;
    zpoints = cbf::locate_zset(model, zopts);
    bundle["z_points"] = cbf::zset_report_json(zpoints);
  } catch (const std::exception& e) {
    return fail_stage("analyze/locate-zset", kZsetError, e);
  }

  nlohmann::json analyses = nlohmann::json::array();
  for (const auto& z : zpoints) {
    try {
      const cbf::TestMatrix T = cbf::assemble_test_matrix(model, z.x);
      const cbf::BoundednessVerdict verdict = cbf::decide_boundedness(T);
      const cbf::Inevitability inevitability = cbf::inevitability_check(T);

      nlohmann::json item = cbf::verdict_json(T, verdict, inevitability);
      nlohmann::json probes;
      if (verdict.certificate) {
        probes["certificate"] = cbf::probe_json(
            cbf::ray_probe(model, z.x, *verdict.certificate, flags.t_max,
                           flags.probe_samples));
      } else {
        probes["certificate"] = nullptr;
      }
      nlohmann::json reference = nlohmann::json::array();
      for (const auto& v :
           cbf::admissible_directions(T.row_h, 8, flags.seed)) {
        try {
          reference.push_back(cbf::probe_json(
              cbf::ray_probe(model, z.x, v, flags.t_max, flags.probe_samples)));
        } catch (const cbf::AllUndefined&) {
          reference.push_back(nullptr);
        }
      }
      probes["reference"] = std::move(reference);
      item["probes"] = std::move(probes);
      analyses.push_back(std::move(item));
    } catch (const std::exception& e) {
      return fail_stage("analyze/boundedness", kBoundednessError, e);
    }
  }
  bundle["z_analyses"] = std::move(analyses);
  if (zpoints.empty())
    bundle["note"] =
        "no discontinuity points found at this seeding density; the min-norm "
        "controller is locally Lipschitz on the safe set";

  if (model.n() == 2) {
    try {
      cbf::SweepOptions sopts;
      sopts.resolution = flags.sweep_res;
      sopts.jobs = flags.jobs;
      const cbf::SweepResult sweep = cbf::sweep_grid(model, sopts);
      const std::string csv_path =
          (std::filesystem::path(flags.out_dir) / "sweep.csv").string();
      std::ofstream out(csv_path, std::ios::binary);
      cbf::write_sweep_csv(out, model, sweep);
      bundle["sweep_csv"] = csv_path;
      bundle["sweep_violations"] = sweep.violation_cells.size();
    } catch (const std::exception& e) {
      return fail_stage("analyze/sweep", kSweepError, e);
    }
  } else {
    bundle["sweep_csv"] = nullptr;
  }

  try {
    write_json_file(
        (std::filesystem::path(flags.out_dir) / "bundle.json").string(), bundle);
  } catch (const std::exception& e) {
    return fail_stage("analyze/write", kBoundednessError, e);
  }
  std::cout << "analysis bundle written to " << flags.out_dir << "/bundle.json ("
            << zpoints.size() << " discontinuity point(s), "
            << cbf::to_string(strength.classification) << ")\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Min-norm safety-filter analysis for control-affine systems"};
  app.set_version_flag("--version", std::string("cbftool ") + cbf::kToolVersion +
                                        " (spec-schema " +
                                        std::to_string(cbf::kSpecSchemaVersion) +
                                        ")");
  app.require_subcommand(1);

  // analyze
  AnalyzeFlags an;
  auto* analyze = app.add_subcommand(
      "analyze", "Full pipeline: weakness probe, discontinuity search, "
                 "boundedness verdicts, ray probes, sweep");
  analyze->add_option("spec", an.spec_path, "system document (JSON)")->required();
  analyze->add_option("--out", an.out_dir, "output directory")->required();
  analyze->add_option("--seeds", an.seeds, "multistart seed count (0 = auto)");
  analyze->add_option("--tol", an.tol, "discontinuity-search tolerance");
  analyze->add_option("--seed", an.seed, "RNG seed for sampling stages");
  analyze->add_option("--res", an.sweep_res, "sweep resolution per axis");
  analyze->add_option("--jobs", an.jobs, "worker threads for sweeps");
  analyze->add_option("--t-max", an.t_max, "largest ray-probe offset");
  analyze->add_option("--samples", an.probe_samples, "ray-probe sample count");

  // sweep
  std::string sw_spec, sw_out;
  int sw_res = 201, sw_jobs = 1;
  std::vector<std::string> sw_fixed;
  auto* sweep = app.add_subcommand("sweep", "Controller magnitude grid as CSV");
  sweep->add_option("spec", sw_spec)->required();
  sweep->add_option("--res", sw_res, "grid points per free axis");
  sweep->add_option("--out", sw_out, "output CSV path")->required();
  sweep->add_option("--fix", sw_fixed,
                    "pin an axis, e.g. --fix 3=0.5 (1-based axis index)");
  sweep->add_option("--jobs", sw_jobs, "worker threads");

  // zset
  std::string zs_spec, zs_out;
  int zs_seeds = 0;
  double zs_tol = 1e-10;
  auto* zset = app.add_subcommand("zset", "Locate the discontinuity set");
  zset->add_option("spec", zs_spec)->required();
  zset->add_option("--seeds", zs_seeds, "multistart seed count (0 = auto)");
  zset->add_option("--tol", zs_tol, "convergence tolerance");
  zset->add_option("--out", zs_out, "output JSON path")->required();

  // test-point
  std::string tp_spec, tp_x, tp_out;
  auto* test_point = app.add_subcommand(
      "test-point", "Assemble the linear test at a state and decide it");
  test_point->add_option("spec", tp_spec)->required();
  test_point->add_option("--x", tp_x, "state, comma-separated")->required();
  test_point->add_option("--out", tp_out, "output JSON path")->required();

  // probe
  std::string pr_spec, pr_x, pr_v, pr_out;
  double pr_tmax = 0.01;
  int pr_samples = 12;
  auto* probe = app.add_subcommand("probe", "Sample ||u*|| along a ray");
  probe->add_option("spec", pr_spec)->required();
  probe->add_option("--x", pr_x, "ray base point, comma-separated")->required();
  probe->add_option("--v", pr_v, "ray direction (normalized internally)")->required();
  probe->add_option("--t-max", pr_tmax, "largest offset along the ray");
  probe->add_option("--samples", pr_samples, "sample count (>= 8)");
  probe->add_option("--out", pr_out, "output JSON path")->required();

  // simulate
  std::string sim_spec, sim_x0, sim_out, sim_events;
  double sim_tfinal = 10.0, sim_dt = 1e-3, sim_tol = 1e-8;
  double sim_ucap = 0.0;
  bool sim_adaptive = false;
  auto* simulate = app.add_subcommand("simulate", "Integrate the closed loop");
  simulate->add_option("spec", sim_spec)->required();
  simulate->add_option("--x0", sim_x0, "initial state, comma-separated")->required();
  simulate->add_option("--t-final", sim_tfinal, "simulation horizon");
  simulate->add_option("--dt", sim_dt, "fixed step size");
  simulate->add_flag("--adaptive", sim_adaptive, "use the embedded 4(5) pair");
  simulate->add_option("--tol", sim_tol, "adaptive local error tolerance");
  simulate->add_option("--u-cap", sim_ucap,
                       "input magnitude cap (0 = uncapped; capping is flagged)");
  simulate->add_option("--out", sim_out, "trajectory CSV path")->required();
  simulate->add_option("--events", sim_events, "events JSON sidecar path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  if (analyze->parsed()) return run_analyze(an);

  if (sweep->parsed()) {
    const cbf::Model model = load_or_exit(sw_spec);
    try {
      cbf::SweepOptions opts;
      opts.resolution = sw_res;
      opts.jobs = sw_jobs;
      for (const auto& pin : sw_fixed) {
        const auto eq = pin.find('=');
        if (eq == std::string::npos)
          throw cbf::Error("--fix expects AXIS=VALUE, got '" + pin + "'");
        const int axis = std::stoi(pin.substr(0, eq));
        if (axis < 1 || axis > model.n())
          throw cbf::Error("--fix axis out of range: " + std::to_string(axis));
        opts.fixed[axis - 1] = std::stod(pin.substr(eq + 1));
      }
      const int free_axes = model.n() - static_cast<int>(opts.fixed.size());
      if (free_axes != 2)
        throw cbf::Error(
            "CSV sweeps need exactly 2 free axes; pin the rest with --fix");
      const cbf::SweepResult result = cbf::sweep_grid(model, opts);
      std::ofstream out(sw_out, std::ios::binary);
      if (!out) throw cbf::Error("cannot open output file '" + sw_out + "'");
      cbf::write_sweep_csv(out, model, result);
      std::cout << "sweep written to " << sw_out << " ("
                << result.cells.size() << " cells, "
                << result.violation_cells.size() << " violation(s))\n";
      return kOk;
    } catch (const std::exception& e) {
      return fail_stage("sweep", kSweepError, e);
    }
  }

  if (zset->parsed()) {
    const cbf::Model model = load_or_exit(zs_spec);
    try {
      cbf::ZsetOptions opts;
      opts.seeds = zs_seeds == 0 ? default_seeds(model) : zs_seeds;
      opts.tol = zs_tol;
      const auto points = cbf::locate_zset(model, opts);
      write_json_file(zs_out, cbf::zset_report_json(points));
      std::cout << points.size() << " discontinuity point(s) written to "
                << zs_out << "\n";
      return kOk;
    } catch (const std::exception& e) {
      return fail_stage("zset", kZsetError, e);
    }
  }

  if (test_point->parsed()) {
    const cbf::Model model = load_or_exit(tp_spec);
    try {
      const cbf::Vector x = parse_vector(tp_x, model.n(), "--x");
      const cbf::TestMatrix T = cbf::assemble_test_matrix(model, x);
      const cbf::BoundednessVerdict verdict = cbf::decide_boundedness(T);
      write_json_file(tp_out,
                      cbf::verdict_json(T, verdict, cbf::inevitability_check(T)));
      std::cout << "verdict " << cbf::to_string(verdict.kind) << " written to "
                << tp_out << "\n";
      return kOk;
    } catch (const std::exception& e) {
      return fail_stage("test-point", kBoundednessError, e);
    }
  }

  if (probe->parsed()) {
    const cbf::Model model = load_or_exit(pr_spec);
    try {
      const cbf::Vector x = parse_vector(pr_x, model.n(), "--x");
      cbf::Vector v = parse_vector(pr_v, model.n(), "--v");
      if (v.norm() == 0.0) throw cbf::Error("--v must be nonzero");
      v /= v.norm();
      const auto report = cbf::ray_probe(model, x, v, pr_tmax, pr_samples);
      write_json_file(pr_out, cbf::probe_json(report));
      std::cout << "ray probe written to " << pr_out << "\n";
      return kOk;
    } catch (const std::exception& e) {
      return fail_stage("probe", kProbeError, e);
    }
  }

  if (simulate->parsed()) {
    const cbf::Model model = load_or_exit(sim_spec);
    try {
      const cbf::Vector x0 = parse_vector(sim_x0, model.n(), "--x0");
      cbf::SimulateOptions opts;
      opts.t_final = sim_tfinal;
      opts.step.mode = sim_adaptive ? cbf::StepControl::Mode::Adaptive
                                    : cbf::StepControl::Mode::Fixed;
      opts.step.dt = sim_dt;
      opts.step.tol = sim_tol;
      if (sim_ucap > 0.0) opts.u_cap = sim_ucap;
      const cbf::Trajectory traj = cbf::simulate(model, x0, opts);
      std::ofstream out(sim_out, std::ios::binary);
      if (!out) throw cbf::Error("cannot open output file '" + sim_out + "'");
      cbf::write_trajectory_csv(out, model, traj);
      if (!sim_events.empty())
        write_json_file(sim_events, cbf::events_json(traj));
      std::cout << traj.t.size() << " steps written to " << sim_out;
      if (traj.truncated) std::cout << " (truncated early)";
      std::cout << "; " << traj.events.size() << " event(s)\n";
      return kOk;
    } catch (const std::exception& e) {
      return fail_stage("simulate", kSimulateError, e);
    }
  }

  return kUsageError;
}
