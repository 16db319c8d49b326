#include "flexlmm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "flexlmm/errors.hpp"

namespace flexlmm {

namespace {

double mean_of(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size()); }

double variance_of(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace

double effective_sample_size(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return static_cast<double>(n);
  const double m = mean_of(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  c0 /= static_cast<double>(n);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
    return s / static_cast<double>(n);
  };
  // Pair sums Gamma_k = rho(2k) + rho(2k+1), truncated at the first non-positive one
  // and forced to be non-increasing.
  double sum = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double g = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (g <= 0.0) break;
    g = std::min(g, prev);
    prev = g;
    sum += g;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(static_cast<double>(n) + 10.0));
  return static_cast<double>(n) / tau;
}

double split_rhat(const std::vector<std::span<const double>>& chains) {
  if (chains.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw DimensionError("split_rhat: chains have different lengths");
  }
  const std::size_t half = n / 2;
  if (half < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::span<const double>> parts;
  for (const auto& c : chains) {
    parts.push_back(c.subspan(0, half));
    parts.push_back(c.subspan(n - half, half));
  }
  const double m = static_cast<double>(parts.size());
  const double len = static_cast<double>(half);
  std::vector<double> means;
  double w = 0.0;
  for (const auto& p : parts) {
    means.push_back(mean_of(p));
    w += variance_of(p);
  }
  w /= m;
  if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double b = len * variance_of(means);
  const double var_plus = (len - 1.0) / len * w + b / len;
  return std::sqrt(var_plus / w);
}

double mc_standard_error(std::span<const double> x) {
  if (x.size() < 2) return std::numeric_limits<double>::infinity();
  return std::sqrt(variance_of(x) / effective_sample_size(x));
}

double batch_means_se(std::span<const double> x, std::size_t batches) {
  if (batches < 2 || x.size() < 2 * batches) return std::numeric_limits<double>::infinity();
  const std::size_t len = x.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) means.push_back(mean_of(x.subspan(b * len, len)));
  return std::sqrt(variance_of(means) / static_cast<double>(batches));
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.2) {
    // The alternating series converges slowly here; use the theta-function form of the CDF.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int k = 1; k < 50; ++k) {
      const double t = (2.0 * k - 1.0) * (2.0 * k - 1.0) * pi2 / (8.0 * lambda * lambda);
      s += std::exp(-t);
    }
    return 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s;
  }
  double s = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-17) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DimensionError("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n1 = static_cast<double>(x.size());
  const double n2 = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
  }
  const double m = std::sqrt(n1 * n2 / (n1 + n2));
  KsResult r;
  r.statistic = d;
  r.p_value = kolmogorov_survival((m + 0.12 + 0.11 / m) * d);
  return r;
}

std::vector<double> thin(std::span<const double> x, std::size_t k) {
  if (k == 0) throw DomainError("thinning interval must be positive");
  std::vector<double> out;
  for (std::size_t i = 0; i < x.size(); i += k) out.push_back(x[i]);
  return out;
}

}  // namespace flexlmm
