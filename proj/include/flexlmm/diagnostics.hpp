#pragma once

#include <span>
#include <string>
#include <vector>

namespace flexlmm {

/// Effective sample size from Geyer's initial monotone positive sequence of
/// autocorrelation pair sums. A constant series returns its length.
double effective_sample_size(std::span<const double> x);

/// Split-chain potential scale reduction over one or more chains of equal length.
/// NaN when undefined (zero within-chain variance or fewer than 4 draws per chain).
double split_rhat(const std::vector<std::span<const double>>& chains);

/// Monte Carlo standard error of the mean, sd / sqrt(ESS).
double mc_standard_error(std::span<const double> x);

/// Batch-means standard error of the mean with `batches` equal batches (remainder dropped).
double batch_means_se(std::span<const double> x, std::size_t batches = 20);

/// P(K > lambda) for the Kolmogorov distribution, by its alternating series.
double kolmogorov_survival(double lambda);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// Q((sqrt(m) + 0.12 + 0.11 / sqrt(m)) D), m = n1 n2 / (n1 + n2).
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Every k-th element starting at 0.
std::vector<double> thin(std::span<const double> x, std::size_t k);

}  // namespace flexlmm
