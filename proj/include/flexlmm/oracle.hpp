#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flexlmm/model.hpp"

namespace flexlmm {

/// Quadrature layout of the brute-force marginal integrator.
///
/// Every scale sigma_0..sigma_r is integrated over log(sigma) on a box centred at the
/// residual scale s = sqrt(SSE / (n - p)). The box half-widths come from `schedule`;
/// the region between consecutive half-widths is one Gauss-Legendre panel per side,
/// so a wider box reuses every node of the narrower ones. Proper shape priors and the
/// SMN mixing distribution are integrated on Gauss-Legendre rules in quantile space.
struct OracleGrid {
  std::vector<double> schedule = {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0};
  int nodes_per_panel = 6;
  std::vector<double> shape_breaks = {0.0, 0.5, 1.0};
  int shape_nodes = 8;
  std::vector<double> mixing_breaks = {0.0, 1e-4, 1e-2, 0.1, 0.5, 0.9, 0.99, 0.9999, 1.0};
  int mixing_nodes = 6;
  /// Absolute tolerance handed to the trivariate orthant probabilities.
  double orthant_tol = 1e-8;
  /// Worker threads for the scale grid (0 = hardware concurrency). Results do not depend on it.
  unsigned threads = 1;
  bool enforce_desk_limits = true;

  std::string describe() const;
};

/// Truncation of the integration domain. Scales run over [s e^-k, s e^k]. Fixed and
/// random effects are integrated in closed form over the whole space, so their
/// half-widths are reported as +inf.
struct Truncation {
  double k = 32.0;
  double beta_halfwidth = std::numeric_limits<double>::infinity();
  double u_halfwidth = std::numeric_limits<double>::infinity();
};

struct MarginalEstimate {
  double value = 0.0;
  double log_value = 0.0;
  Truncation truncation;
  double center_scale = 0.0;
  /// Relative change from the previous box of the schedule (0 when there is none).
  double rel_increment = 0.0;
  std::string grid_spec;
};

enum class ProbeOutcome { Converges, Diverges, Inconclusive };
std::string to_string(ProbeOutcome o);

struct ProbeStep {
  double k = 0.0;
  double value = 0.0;
  double log_value = 0.0;
  /// (V_j - V_{j-1}) / V_{j-1}; 0 for the first step.
  double rel_increment = 0.0;
};

struct ProbeVerdict {
  ProbeOutcome outcome = ProbeOutcome::Inconclusive;
  std::vector<ProbeStep> trace;
  double tol = 1e-3;
  std::string reason;
};

/// Classifies a sequence of log-values: CONVERGES when the last two relative increments
/// are below tol; DIVERGES when the absolute increments are non-decreasing over the last
/// three expansions and V_K / V_{K-3} exceeds growth_factor; INCONCLUSIVE otherwise.
ProbeVerdict classify_trace(const std::vector<double>& ks, const std::vector<double>& log_values, double tol = 1e-3,
                            double growth_factor = 1.01);

/// Flat-beta Gaussian marginal with normal random effects at fixed scales (sigma_0..sigma_r):
/// (2 pi)^{-(n-p)/2} |V|^{-1/2} |X' V^-1 X|^{-1/2} exp(-y' (V^-1 - V^-1 X (X' V^-1 X)^-1 X' V^-1) y / 2),
/// V = sigma_0^2 I + Z D Z'. The random-effects family of `spec` is ignored.
double log_normal_profile_marginal(const ModelSpec& spec, const Eigen::VectorXd& y, std::span<const double> sigmas);
double normal_profile_marginal(const ModelSpec& spec, const Eigen::VectorXd& y, std::span<const double> sigmas);

/// m(y) restricted to the truncated scale box: the flat prior on beta and the random
/// effects are integrated exactly, scales and shape parameters by quadrature.
/// Constants: beta's flat prior has unit density, priors on the scales are the unnormalised
/// kernels sigma^-(2a+1) exp(-b / sigma^2) or 1 / (1 + sigma^2 / s^2), shape priors and
/// random-effect densities are normalised.
MarginalEstimate marginal_truncated(const ModelSpec& spec, const Eigen::VectorXd& y, const Truncation& truncation,
                                    const OracleGrid& grid = {});

/// Evaluates the truncated marginal on every box of the schedule and classifies the sequence.
ProbeVerdict propriety_probe(const ModelSpec& spec, const Eigen::VectorXd& y, const OracleGrid& grid = {},
                             double tol = 1e-3);

/// Lower and upper bounds on the truncated marginal obtained by bounding the random-effects
/// density pointwise, on the same box:
///   two-piece normal: (2h/H) N(u; 0, (sigma h)^2) <= s(u) <= (2 max{a,b} / H) N(u; 0, (sigma max{a,b})^2)
///                     and s(u) <= 2 N(u; 0, (sigma H)^2);
///   FSN with inf p >= 0 and sup p < inf: inf p N(u; 0, sigma^2) <= s(u) <= sup p N(u; 0, sigma^2).
/// For the power-exponential prior the separated forms after the substitutions
/// theta = sigma h and theta = sigma H are reported too (valid for the untruncated integral).
struct BoundingResult {
  double log_value = 0.0;
  double log_lower = 0.0;
  double log_upper = 0.0;      // 2 N(u; 0, (sigma H)^2) form
  double log_upper_max = 0.0;  // max{a, b} form
  bool separated_available = false;
  double log_lower_separated = 0.0;
  double log_upper_separated = 0.0;
  Truncation truncation;
};

BoundingResult bounding_integrals(const ModelSpec& spec, const Eigen::VectorXd& y, const Truncation& truncation,
                                  const OracleGrid& grid = {});

/// "k,value,rel_increment" lines with a header.
std::string probe_trace_csv(const ProbeVerdict& verdict);

}  // namespace flexlmm
