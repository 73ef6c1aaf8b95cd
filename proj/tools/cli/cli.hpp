#pragma once

// Config-file-first front end: `vcomp generate|fit|experiment --config FILE`.
//
// Exit codes: 0 success, 1 I/O, parse or numeric failure, 2 statistical flag
// (non-identifiable or degenerate data).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "vcomp/mcverify.hpp"
#include "vcomp/remodel.hpp"
#include "vcomp/vcest.hpp"

namespace vcomp::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kStatistical = 2 };

/// Flag values that override the config file.
struct Overrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

/// A parsed config file. Unknown keys are rejected; relative paths are
/// resolved against the directory holding the file.
struct RunConfig {
  std::filesystem::path path;
  std::filesystem::path base_dir;
  std::string text;           ///< raw bytes, hashed into the manifest
  std::uint64_t hash = 0;     ///< FNV-1a of text

  static RunConfig load(const std::filesystem::path& path);
  [[nodiscard]] std::filesystem::path resolve(const std::string& p) const;
};

struct GenerateConfig {
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  DesignSpec design = GaussianIIDDesign{};
  ModelParams params;
  EffectLaws laws;
  CouplingScheme coupling = NoCoupling{};
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct FitConfig {
  std::filesystem::path x_path;
  std::filesystem::path y_path;
  bool trace = false;
  FitOptions options;
  std::optional<std::filesystem::path> out;
};

struct ExperimentConfig {
  ExperimentPlan plan;
  bool seed_given = false;
  std::optional<std::filesystem::path> out;
};

[[nodiscard]] GenerateConfig parse_generate(const RunConfig& cfg);
[[nodiscard]] FitConfig parse_fit(const RunConfig& cfg);
[[nodiscard]] ExperimentConfig parse_experiment(const RunConfig& cfg);

/// Seed precedence: --seed, then the config's "seed", then $VCOMP_SEED, then 0.
[[nodiscard]] std::uint64_t resolve_seed(std::optional<std::uint64_t> flag,
                                         std::optional<std::uint64_t> config);

int cmd_generate(const RunConfig& cfg, const Overrides& ov);
int cmd_fit(const RunConfig& cfg, const Overrides& ov);
int cmd_experiment(const RunConfig& cfg, const Overrides& ov);

/// Parses argv and dispatches; never throws.
int run(int argc, char** argv);

}  // namespace vcomp::cli
