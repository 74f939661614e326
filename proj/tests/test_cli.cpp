#include "varmech/io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace varmech;
namespace fs = std::filesystem;

#ifndef VARMECH_BIN
#define VARMECH_BIN "varmech"
#endif

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VARMECH_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path tmpdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

} // namespace

TEST_CASE("problem config round trip is the identity") {
  for (auto kind : {prob::ProblemKind::brachistochrone, prob::ProblemKind::catenary,
                    prob::ProblemKind::plate}) {
    prob::ProblemConfig cfg = io::default_problem_config(kind);
    cfg.disc.seed = 42;
    cfg.weights.lambda_bc = 77.0;
    auto j = io::problem_config_to_json(cfg);
    prob::ProblemConfig back = io::problem_config_from_json(j);
    CHECK(io::problem_config_to_json(back).dump() == j.dump());
  }
}

TEST_CASE("config errors carry the line number") {
  const fs::path p = fs::temp_directory_path() / "vm_bad.json";
  {
    std::ofstream f(p);
    f << "{\n  \"problem\": \"brachistochrone\",\n  \"geometry\": {\n";
  }
  try {
    io::load_problem_config(p.string());
    FAIL("expected ConfigError");
  } catch (const io::ConfigError& e) {
    CHECK(std::string(e.what()).find(":4") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("format_double round-trips doubles exactly") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, int(rng.uniform(-30, 30)));
    CHECK(std::stod(io::format_double(x)) == x);
  }
}

TEST_CASE("exit codes: malformed family and infeasible sample") {
  CHECK(run_cli("train --family 'h(30-)' --out /tmp/vm_cli_bad") == io::exit_config_error);
  CHECK(run_cli("train --family q30 --out /tmp/vm_cli_bad") == io::exit_config_error);
  CHECK(run_cli("oracle --kind catenary --h 50 --l 90 --out /tmp/vm_cli_bad") ==
        io::exit_infeasible);
}

TEST_CASE("train and sweep bundles are byte-identical across reruns") {
  const fs::path a = tmpdir("vm_cli_a"), b = tmpdir("vm_cli_b");
  const std::string args = "train --family h50 --seed 3 --max-loops 60 --stop-tol 0 --out ";
  REQUIRE(run_cli(args + a.string()) == io::exit_ok);
  REQUIRE(run_cli(args + b.string()) == io::exit_ok);
  CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
  CHECK(slurp(a / "run.json") == slurp(b / "run.json"));
  CHECK(slurp(a / "la.csv") == slurp(b / "la.csv"));

  const fs::path sa = tmpdir("vm_cli_sa"), sb = tmpdir("vm_cli_sb");
  const std::string sweep = "sweep --checkpoint " + (a / "run.json").string() + " --out ";
  REQUIRE(run_cli(sweep + sa.string()) == io::exit_ok);
  REQUIRE(run_cli(sweep + sb.string()) == io::exit_ok);
  CHECK(slurp(sa / "sweep.csv") == slurp(sb / "sweep.csv"));
  CHECK(slurp(sa / "summary.json") == slurp(sb / "summary.json"));
  for (auto p : {a, b, sa, sb}) fs::remove_all(p);
}

TEST_CASE("manifest hashes match the files on disk") {
  const fs::path dir = tmpdir("vm_cli_m");
  REQUIRE(run_cli("train --family h30 --seed 1 --max-loops 40 --stop-tol 0 --out " +
                  dir.string()) == io::exit_ok);
  std::ifstream f(dir / "manifest.json");
  nlohmann::json m = nlohmann::json::parse(f);
  CHECK(m.at("tool_version") == io::kToolVersion);
  for (const auto& entry : m.at("files")) {
    const std::string rel = entry.at("path").get<std::string>();
    char hex[20];
    std::snprintf(hex, sizeof hex, "%016llx",
                  (unsigned long long)io::fnv1a64_file((dir / rel).string()));
    CHECK(entry.at("fnv1a64").get<std::string>() == hex);
  }
  fs::remove_all(dir);
}

TEST_CASE("activity on a plate checkpoint reports unsupported depth") {
  // fabricate a minimal plate run checkpoint
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::plate);
  train::TrainedModel m;
  m.kind = prob::ProblemKind::plate;
  m.family = "p3";
  m.params = prob::default_model(cfg.kind, 0);
  m.samples = prob::make_sample_set(cfg.kind, "p3");
  m.opt.init(m.params.param_count());
  m.trace.sample_labels = {"p3"};
  m.trace.epochs_per_sample = 100;
  const fs::path p = fs::temp_directory_path() / "vm_plate_run.json";
  train::save_run(m, p.string());
  CHECK(run_cli("activity --checkpoint " + p.string() + " --out /tmp/vm_cli_bad") ==
        io::exit_config_error);
  fs::remove(p);
}
