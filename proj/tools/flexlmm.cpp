#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "flexlmm/cli.hpp"
#include "flexlmm/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Propriety checks, marginal-likelihood probes and MCMC for flexible linear mixed models"};
  app.require_subcommand(1);
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool verbose = false;

  const std::pair<const char*, const char*> commands[] = {
      {"check", "Propriety verdict for the configured model"},
      {"probe", "Truncated marginal likelihood over expanding boxes"},
      {"sample", "Metropolis-within-Gibbs draws and diagnostics"},
      {"bf", "Savage-Dickey ratio or the SMN Bayes-factor demonstration"},
      {"dist", "Density evaluations and draws for one distribution"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Random seed (overrides the config)");
    sub->add_option("--out", out, "Output directory (default: config \"output\", then $FLEXLMM_OUT_DIR, then .)");
    sub->add_flag("--verbose", verbose, "Progress messages on stderr");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const flexlmm::Command command = flexlmm::command_from_string(app.get_subcommands().front()->get_name());
    const flexlmm::RunConfig cfg = flexlmm::load_config(config, command);
    flexlmm::RunOptions options;
    options.seed = seed;
    options.verbose = verbose;
    if (!out.empty()) options.out_dir = out;
    return flexlmm::run(cfg, options).exit_code;
  } catch (const flexlmm::ParseError& e) {
    std::cerr << "error: " << e.what();
    if (e.row() > 0) std::cerr << " (row " << e.row() << ", column " << e.column() << ")";
    std::cerr << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 1;
}
