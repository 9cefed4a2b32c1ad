#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

const std::string kBin = CBFTOOL_BIN;
const std::string kSpecs = CBF_SPEC_DIR;

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path capture =
      fs::temp_directory_path() / ("cbftool_out_" + std::to_string(::getpid()));
  const std::string cmd = kBin + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  fs::remove(capture);
  return result;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("cbftool_test_" + tag);
  fs::create_directories(dir);
  return dir;
}

const std::string kDisk = kSpecs + "/double_integrator_circle.json";
const std::string kGain = kSpecs + "/quadratic_gain_circle.json";
const std::string kFull = kSpecs + "/single_integrator_circle.json";

}  // namespace

TEST_CASE("version flag") {
  const auto res = run("--version");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("cbftool") != std::string::npos);
  CHECK(res.output.find("spec-schema") != std::string::npos);
}

TEST_CASE("stage-specific exit codes") {
  CHECK(run("zset /nonexistent.json --out /tmp/x.json").exit_code == 2);

  const fs::path dir = temp_dir("codes");
  const fs::path broken = dir / "broken.json";
  std::ofstream(broken) << "{ not json";
  CHECK(run("zset " + broken.string() + " --out /tmp/x.json").exit_code == 2);

  const fs::path mismatched = dir / "mismatch.json";
  std::ofstream(mismatched) << R"({"n":2,"m":1,"f":["x2","0","0"],
    "G":[["0","1"]],"h":"1 - x1^2 - x2^2",
    "alpha":{"family":"linear","k1":1.0},
    "domain_box":[[-1.2,1.2],[-1.2,1.2]]})";
  CHECK(run("zset " + mismatched.string() + " --out /tmp/x.json").exit_code == 2);

  // tolerance outside (0, 1e-4]
  CHECK(run("zset " + kDisk + " --tol 1e-3 --out " +
            (dir / "z.json").string()).exit_code == 4);
  // not a discontinuity point
  CHECK(run("test-point " + kDisk + " --x 0.5,0.5 --out " +
            (dir / "tp.json").string()).exit_code == 5);
  // degenerate ray
  CHECK(run("probe " + kGain + " --x 1.1,0 --v 1,0 --out " +
            (dir / "pr.json").string()).exit_code == 6);
  // unsafe initial state
  CHECK(run("simulate " + kDisk + " --x0 1.2,0 --out " +
            (dir / "tr.csv").string()).exit_code == 7);
  // usage
  CHECK(run("no-such-command").exit_code == 64);
  CHECK(run("zset").exit_code == 64);
}

TEST_CASE("zset and analyze are byte-deterministic") {
  const fs::path dir = temp_dir("determinism");
  const fs::path z1 = dir / "z1.json";
  const fs::path z2 = dir / "z2.json";
  REQUIRE(run("zset " + kDisk + " --out " + z1.string()).exit_code == 0);
  REQUIRE(run("zset " + kDisk + " --out " + z2.string()).exit_code == 0);
  CHECK(slurp(z1) == slurp(z2));

  // Identical flags (including --out) must reproduce every byte.
  const fs::path adir = dir / "bundle";
  const std::string cmd =
      "analyze " + kGain + " --out " + adir.string() + " --res 51 --seed 42";
  REQUIRE(run(cmd).exit_code == 0);
  const std::string first_bundle = slurp(adir / "bundle.json");
  const std::string first_sweep = slurp(adir / "sweep.csv");
  REQUIRE(run(cmd).exit_code == 0);
  CHECK(slurp(adir / "bundle.json") == first_bundle);
  CHECK(slurp(adir / "sweep.csv") == first_sweep);
}

TEST_CASE("analyze bundles carry the pipeline results") {
  const fs::path dir = temp_dir("bundle");

  REQUIRE(run("analyze " + kDisk + " --out " + (dir / "disk").string() +
              " --res 41").exit_code == 0);
  const auto disk = nlohmann::json::parse(slurp(dir / "disk" / "bundle.json"));
  CHECK(disk.at("strength").at("classification") == "EvidenceWeak");
  REQUIRE(disk.at("z_points").size() == 2);
  for (const auto& item : disk.at("z_analyses")) {
    CHECK(item.at("kind") == "Bounded");
    CHECK(item.at("inevitability") == "NotDetermined");
    CHECK(item.at("probes").at("certificate").is_null());
    CHECK(item.at("probes").at("reference").size() == 8);
  }
  CHECK(disk.at("spec").at("h") == "1 - x1^2 - x2^2");

  REQUIRE(run("analyze " + kGain + " --out " + (dir / "gain").string() +
              " --res 41").exit_code == 0);
  const auto gain = nlohmann::json::parse(slurp(dir / "gain" / "bundle.json"));
  REQUIRE(gain.at("z_points").size() == 2);
  for (const auto& item : gain.at("z_analyses")) {
    CHECK(item.at("kind") == "Unbounded");
    CHECK(item.at("inevitability") == "InevitablyUnbounded");
    const auto v = item.at("certificate_v");
    REQUIRE(v.is_array());
    CHECK(std::abs(v.at(0).get<double>()) < 1e-9);
    const auto cert_probe = item.at("probes").at("certificate");
    REQUIRE(cert_probe.is_object());
    CHECK(cert_probe.at("exponent").get<double>() < -1.5);
  }

  REQUIRE(run("analyze " + kFull + " --out " + (dir / "full").string() +
              " --res 41").exit_code == 0);
  const auto full = nlohmann::json::parse(slurp(dir / "full" / "bundle.json"));
  CHECK(full.at("z_points").empty());
  CHECK(full.at("note").get<std::string>().find("locally Lipschitz") !=
        std::string::npos);
  CHECK(full.at("strength").at("classification") == "NoWeakEvidenceFound");
}

TEST_CASE("sweep subcommand emits the documented CSV") {
  const fs::path dir = temp_dir("sweep");
  const fs::path csv = dir / "sweep.csv";
  REQUIRE(run("sweep " + kDisk + " --res 201 --out " + csv.string()).exit_code ==
          0);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "x1,x2,h,N,lgh_norm,region,u1,u_norm");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 201 * 201);
}

TEST_CASE("test-point subcommand reproduces the linear test") {
  const fs::path dir = temp_dir("tp");
  const fs::path out = dir / "tp.json";
  REQUIRE(run("test-point " + kGain + " --x 1,0 --out " + out.string())
              .exit_code == 0);
  const auto doc = nlohmann::json::parse(slurp(out));
  CHECK(doc.at("kind") == "Unbounded");
  const auto A = doc.at("A");
  REQUIRE(A.size() == 3);
  CHECK(A.at(0).at(0).get<double>() == -2.0);
  CHECK(A.at(1).at(0).get<double>() == -2.0);
  CHECK(A.at(1).at(1).get<double>() == -2.0);
  CHECK(A.at(2).at(0).get<double>() == 0.0);
  CHECK(A.at(2).at(1).get<double>() == 0.0);
  CHECK(doc.at("caveat") == "straight-line directions only");
}

TEST_CASE("probe and simulate subcommands") {
  const fs::path dir = temp_dir("probe_sim");
  const fs::path probe = dir / "probe.json";
  REQUIRE(run("probe " + kDisk + " --x 1,0 --v 0,1 --t-max 0.01 --out " +
              probe.string()).exit_code == 0);
  const auto pdoc = nlohmann::json::parse(slurp(probe));
  CHECK(std::abs(pdoc.at("exponent").get<double>()) < 0.05);
  const double limsup = pdoc.at("limsup_estimate").get<double>();
  CHECK(limsup >= 1.0);
  CHECK(limsup <= 1.01);

  const fs::path traj = dir / "traj.csv";
  const fs::path events = dir / "events.json";
  REQUIRE(run("simulate " + kDisk + " --x0 0.5,0.5 --t-final 1 --out " +
              traj.string() + " --events " + events.string()).exit_code == 0);
  CHECK(fs::exists(traj));
  const auto edoc = nlohmann::json::parse(slurp(events));
  CHECK(edoc.is_array());
}
