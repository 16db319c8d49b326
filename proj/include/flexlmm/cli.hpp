#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flexlmm/io.hpp"
#include "flexlmm/model.hpp"
#include "flexlmm/oracle.hpp"
#include "flexlmm/sampler.hpp"

namespace flexlmm {

enum class Command { Check, Probe, Sample, Bf, Dist };
std::string to_string(Command c);
Command command_from_string(const std::string& name);

struct BfConfig {
  /// "savage_dickey" or "smn_demo".
  std::string mode = "savage_dickey";
  /// 1-based factor whose shape parameter is tested.
  std::size_t factor = 1;
  /// Defaults to the symmetric point of the family.
  std::optional<double> gamma0;
  std::vector<Eigen::VectorXd> datasets;
  std::optional<SmnEffects> mixing1;
  std::optional<SmnEffects> mixing2;
};

struct DistConfig {
  /// "normal", "two_piece", "fsn" or "smn".
  std::string family = "normal";
  std::string parameterisation = "epsilon_skew";
  std::string fsn_family = "skew_normal";
  std::string mixing = "gamma";
  double shape = 0.0;
  double mu = 0.0;
  double sigma = 1.0;
  double from = -5.0;
  double to = 5.0;
  std::size_t points = 201;
  std::size_t samples = 0;
};

struct RunConfig {
  Command command = Command::Check;
  std::optional<ModelSpec> model;
  std::optional<Eigen::VectorXd> y;
  std::optional<ProbitSpec> probit;
  OracleGrid grid;
  double probe_tol = 1e-3;
  SamplerOptions sampler;
  std::size_t chains = 1;
  unsigned threads = 1;
  BfConfig bf;
  DistConfig dist;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> output;
};

/// Strict parse: unknown keys and type mismatches raise ConfigError naming the JSON pointer.
/// Relative file paths are resolved against base_dir. `command` overrides the document's "command".
RunConfig parse_config(const Json& doc, const std::filesystem::path& base_dir,
                       std::optional<Command> command = std::nullopt);
RunConfig load_config(const std::filesystem::path& path, std::optional<Command> command = std::nullopt);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

struct RunResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> artifacts;
};

/// Exit status: 0 PROPER / CONVERGES / success, 2 IMPROPER / DIVERGES, 3 UNDETERMINED / INCONCLUSIVE.
int exit_code_for(Verdict v);
int exit_code_for(ProbeOutcome o);

/// Output directory: the explicit option, else the config's "output", else $FLEXLMM_OUT_DIR, else ".".
RunResult run(const RunConfig& config, const RunOptions& options = {});

}  // namespace flexlmm
