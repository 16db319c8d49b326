#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flexlmm/distributions.hpp"
#include "flexlmm/model.hpp"
#include "flexlmm/oracle.hpp"
#include "flexlmm/sampler.hpp"

namespace flexlmm {

struct SavageDickeyOptions {
  std::size_t batches = 20;
  /// Fewer draws than this within one bandwidth of gamma0 triggers a warning and an inflated error.
  std::size_t min_near = 50;
};

struct SavageDickeyResult {
  /// pi(gamma0 | y) / pi(gamma0): Bayes factor of the symmetric model against the skewed one.
  double bf = 0.0;
  double se = 0.0;
  double posterior_density = 0.0;
  double posterior_density_se = 0.0;
  double prior_density = 0.0;
  double bandwidth = 0.0;
  std::size_t draws = 0;
  std::size_t draws_near = 0;
  std::vector<std::string> warnings;
};

/// Savage-Dickey density ratio at gamma0. The posterior density is a Gaussian kernel
/// estimate with Silverman's bandwidth, reflected at the finite ends of the prior's
/// support; its standard error comes from batch means of the per-draw kernel terms.
SavageDickeyResult savage_dickey(std::span<const double> draws, const ShapePrior& prior, double gamma0,
                                 const SavageDickeyOptions& options = {});
SavageDickeyResult savage_dickey(const ChainOutput& chain, const ShapePrior& prior, double gamma0,
                                 const std::string& column = "gamma_1", const SavageDickeyOptions& options = {});

/// A chain of independent draws from the shape prior alone, in column `column`.
ChainOutput prior_only_chain(const ShapePrior& prior, std::size_t draws, std::uint64_t seed,
                             const std::string& column = "gamma_1");

struct SmnConstant {
  double value = 1.0;
  bool finite = true;
  std::string diagnostic;
};

/// c = integral of prod_i E[tau^-a_i | delta] against pi(delta).
SmnConstant smn_constant(std::span<const double> a, const MixingDistribution& mixing, const ShapePrior& delta_prior);

struct InvarianceRow {
  std::size_t dataset = 0;
  std::string mixing;
  double log_m_smn = 0.0;
  double log_m_normal = 0.0;
  double ratio = 0.0;
  double constant = 0.0;
  /// ratio / constant - 1
  double deviation = 0.0;
  ProbeOutcome outcome = ProbeOutcome::Inconclusive;
};

struct InvarianceReport {
  std::vector<std::string> mixings;
  std::vector<InvarianceRow> rows;
  /// Per dataset: m~_1(y) / m~_2(y).
  std::vector<double> bayes_factors;
  /// Constant ratio c_1 / c_2.
  double expected_bayes_factor = 0.0;
  double max_ratio_deviation = 0.0;
  /// Largest |BF_j / BF_k - 1| over pairs of datasets.
  double max_bf_deviation = 0.0;
  bool incomplete = false;
  std::vector<std::string> notes;
};

/// m~(y) / m_N(y) for every dataset and both mixings. m~ comes from the oracle; m_N from the
/// Gaussian profile marginal integrated over the scales on the same log-scale panels.
/// Requires the power prior with b_1..b_r = 0.
InvarianceReport smn_bf_invariance_demo(const ModelSpec& spec, const std::vector<Eigen::VectorXd>& datasets,
                                        const SmnEffects& mixing1, const SmnEffects& mixing2,
                                        const OracleGrid& grid = {});

/// log m_N(y) on the truncated scale box of half-width k, plus the per-box trace.
ProbeVerdict normal_marginal_by_scales(const ModelSpec& spec, const Eigen::VectorXd& y, const OracleGrid& grid = {});

}  // namespace flexlmm
