#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vcomp");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return vcomp::cli::run(static_cast<int>(argv.size()), argv.data());
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const fs::path kFixtures{VCOMP_FIXTURE_DIR};

}  // namespace

TEST_CASE("generate then fit recovers the parameters") {
  const auto dir = vcomp::testing::temp_dir("cli_roundtrip");
  write(dir / "gen.json", R"({"n": 800, "p": 800, "params": {"sigma0_sq": 1.0, "eta0_sq": 1.0}, "seed": 5})");
  REQUIRE(run_cli({"generate", "--config", (dir / "gen.json").string(), "--out", (dir / "data").string()}) == 0);
  const json truth = read_json(dir / "data" / "truth.json");
  CHECK(truth["n"] == 800);
  CHECK(read_json(dir / "data" / "manifest.json")["seed"] == 5);

  write(dir / "data" / "fit.json.in", R"({"x": "X.csv", "y": "y.csv", "out": "fit"})");
  REQUIRE(run_cli({"fit", "--config", (dir / "data" / "fit.json.in").string()}) == 0);
  const json fit = read_json(dir / "data" / "fit" / "fit.json");
  CHECK(std::abs(fit["eta2_hat"].get<double>() - 1.0) < 0.5);
  CHECK(std::abs(fit["sigma2_hat"].get<double>() - 1.0) < 0.3);
  CHECK(fit["identifiable"] == true);
  CHECK(fit["psi"].is_array());
}

TEST_CASE("fit exit codes") {
  const auto dir = vcomp::testing::temp_dir("cli_fit");
  CHECK(run_cli({"fit", "--config", (kFixtures / "exact_recovery" / "fit.json").string(), "--out",
                 (dir / "exact").string()}) == 0);
  const json truth = read_json(kFixtures / "exact_recovery" / "truth.json");
  const json fit = read_json(dir / "exact" / "fit.json");
  CHECK(std::abs(fit["eta2_hat"].get<double>() - truth["eta0_sq"].get<double>()) < 1e-6);
  CHECK(std::abs(fit["sigma2_hat"].get<double>() - truth["sigma0_sq"].get<double>()) < 1e-6);
  CHECK(fit["trace"].size() == 64);

  CHECK(run_cli({"fit", "--config", (kFixtures / "constant_spectrum" / "fit.json").string(), "--out",
                 (dir / "flat").string()}) == 2);
  CHECK(read_json(dir / "flat" / "fit.json")["identifiable"] == false);

  write(dir / "missing.json", R"({"x": "nope.csv", "y": "nope.csv"})");
  CHECK(run_cli({"fit", "--config", (dir / "missing.json").string(), "--out", (dir / "m").string()}) == 1);
  CHECK(run_cli({"fit", "--config", (dir / "absent.json").string()}) == 1);

  write(dir / "unknown.json", R"({"x": "X.csv", "y": "y.csv", "colour": 1})");
  CHECK(run_cli({"fit", "--config", (dir / "unknown.json").string()}) == 1);
  write(dir / "broken.json", R"({"x": )");
  CHECK(run_cli({"fit", "--config", (dir / "broken.json").string()}) == 1);
  CHECK(run_cli({"bogus"}) == 1);
  CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("experiment outputs and manifests") {
  const auto dir = vcomp::testing::temp_dir("cli_experiment");
  write(dir / "exp.json", R"({"kind": "consistency", "n_grid": [30, 60], "replicates": 100, "seed": 3})");
  REQUIRE(run_cli({"experiment", "--config", (dir / "exp.json").string(), "--out", (dir / "a").string()}) == 0);
  REQUIRE(run_cli({"experiment", "--config", (dir / "exp.json").string(), "--out", (dir / "b").string(),
                   "--workers", "2"}) == 0);
  const std::string csv = slurp(dir / "a" / "cells.csv");
  CHECK(csv.rfind("n,params,quantity,estimate,stderr,gate,pass,reliable\n", 0) == 0);
  int medians = 0;
  std::istringstream lines(csv);
  for (std::string line; std::getline(lines, line);)
    if (line.find(",median_error,") != std::string::npos) ++medians;
  CHECK(medians == 2);
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
  const json m = read_json(dir / "a" / "manifest.json");
  CHECK(m["seed"] == 3);
  CHECK(m["command"] == "experiment");
  CHECK(m["versions"].contains("eigen"));

  write(dir / "bad.json", R"({"kind": "consistency", "n_grid": [30, 60], "replicates": 10})");
  CHECK(run_cli({"experiment", "--config", (dir / "bad.json").string(), "--out", (dir / "c").string()}) == 1);
}

TEST_CASE("seed precedence") {
  const auto dir = vcomp::testing::temp_dir("cli_seed");
  write(dir / "noseed.json", R"({"n": 5, "p": 5})");
  write(dir / "seed.json", R"({"n": 5, "p": 5, "seed": 11})");
  ::setenv("VCOMP_SEED", "42", 1);
  CHECK(vcomp::cli::resolve_seed(std::nullopt, std::nullopt) == 42);
  CHECK(vcomp::cli::resolve_seed(std::nullopt, 11) == 11);
  CHECK(vcomp::cli::resolve_seed(7, 11) == 7);
  REQUIRE(run_cli({"generate", "--config", (dir / "noseed.json").string(), "--out", (dir / "e").string()}) == 0);
  CHECK(read_json(dir / "e" / "manifest.json")["seed"] == 42);
  REQUIRE(run_cli({"generate", "--config", (dir / "seed.json").string(), "--out", (dir / "c").string()}) == 0);
  CHECK(read_json(dir / "c" / "manifest.json")["seed"] == 11);
  REQUIRE(run_cli({"generate", "--config", (dir / "seed.json").string(), "--out", (dir / "f").string(),
                   "--seed", "9"}) == 0);
  CHECK(read_json(dir / "f" / "manifest.json")["seed"] == 9);
  ::setenv("VCOMP_SEED", "notanumber", 1);
  CHECK(run_cli({"generate", "--config", (dir / "noseed.json").string(), "--out", (dir / "g").string()}) == 1);
  ::unsetenv("VCOMP_SEED");
  CHECK(vcomp::cli::resolve_seed(std::nullopt, std::nullopt) == 0);
}
