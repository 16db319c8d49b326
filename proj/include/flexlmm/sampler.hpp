#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flexlmm/model.hpp"
#include "flexlmm/propriety.hpp"

namespace flexlmm {

/// One state of the chain.
struct SamplerState {
  Eigen::VectorXd beta;
  Eigen::VectorXd u;
  /// sigma_0..sigma_r.
  std::vector<double> sigma;
  /// gamma_i (two-piece normal) or lambda_i (FSN); empty otherwise.
  std::vector<double> shape;
  /// SMN mixing shape; unused for other families.
  double delta = 0.0;
};

struct SamplerOptions {
  /// Total iterations including burn-in.
  std::size_t iterations = 6000;
  std::size_t burn_in = 1000;
  std::uint64_t seed = 1;
  std::size_t chain_index = 0;
  /// Sample even when the propriety checker does not return PROPER.
  bool override_propriety = false;
  /// Hold sigma_0..sigma_r at these values (the conjugate sub-case for normal effects).
  std::optional<std::vector<double>> fixed_scales;
  std::optional<SamplerState> initial;
  /// Robbins-Monro target for the random-walk blocks during burn-in.
  double target_acceptance = 0.44;
  double initial_step = 0.5;
};

struct ChainOutput {
  /// Column names: beta_1.., u_1.., sigma_0..sigma_r, gamma_i / lambda_i, delta.
  std::vector<std::string> names;
  /// One row per post-burn-in iteration.
  Eigen::MatrixXd draws;
  std::uint64_t seed = 0;
  std::size_t chain_index = 0;
  /// Post-burn-in acceptance rate and frozen step size of every Metropolis block.
  std::map<std::string, double> acceptance_rates;
  std::map<std::string, double> step_sizes;
  /// Per column: effective sample size and split-chain scale reduction of this chain.
  std::map<std::string, double> ess;
  std::map<std::string, double> split_rhat;
  std::optional<Verdict> gate_verdict;
  std::vector<std::string> warnings;

  Eigen::VectorXd column(const std::string& name) const;
  std::size_t column_index(const std::string& name) const;
};

/// Metropolis-within-Gibbs sampler. Exact blocks: beta, sigma_0^2, the two-piece
/// normal effects (mixture of two truncated normals), the two-piece normal and normal
/// sigma_i^2 (inverse gamma; with an auxiliary inverse-gamma variable under the
/// half-Cauchy prior). Random-walk Metropolis: FSN and SMN effects and scales, shapes
/// on their unconstrained transform, delta on log scale, and (beta, u) along the null
/// space of (X : Z).
/// Refuses (ConfigError) unless the propriety checker returns PROPER, override_propriety
/// is set, or the scales are fixed.
ChainOutput mwg_sample(const ModelSpec& spec, const Eigen::VectorXd& y, const SamplerOptions& options);

/// Chains with indices 0..chains-1 and the same base seed; each draws from its own stream.
std::vector<ChainOutput> sample_chains(const ModelSpec& spec, const Eigen::VectorXd& y, const SamplerOptions& options,
                                       std::size_t chains, unsigned threads = 1);

struct ParameterDiagnostics {
  double mean = 0.0;
  double sd = 0.0;
  double ess = 0.0;
  double mcse = 0.0;
  /// NaN when undefined.
  double split_rhat = 0.0;
  bool rhat_undefined = false;
};

struct DiagnosticsReport {
  std::map<std::string, ParameterDiagnostics> parameters;
  std::map<std::string, double> acceptance_rates;  // averaged over chains
  std::vector<std::string> warnings;
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
};

/// Pooled ESS and split-R-hat per column. A single chain gives a report with a warning.
DiagnosticsReport diagnostics(const std::vector<ChainOutput>& chains);

/// RNG seeded from (seed, chain index).
Rng chain_rng(std::uint64_t seed, std::size_t chain_index);

/// Draw from N(mu, sd^2) truncated to [0, inf) (positive) or (-inf, 0].
double truncated_normal_half(Rng& rng, double mu, double sd, bool positive);

/// GLS estimate and covariance of beta at fixed scales: ((X'V^-1X)^-1 X'V^-1 y, (X'V^-1X)^-1).
std::pair<Eigen::VectorXd, Eigen::MatrixXd> conjugate_beta_posterior(const ModelSpec& spec, const Eigen::VectorXd& y,
                                                                     const std::vector<double>& sigmas);

}  // namespace flexlmm
