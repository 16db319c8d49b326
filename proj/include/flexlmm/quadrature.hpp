#pragma once

#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace flexlmm::quad {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Options {
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_intervals = 4000;
};

struct Result {
  double value = 0.0;
  double error = 0.0;
  int intervals = 0;
};

/// Globally adaptive Gauss-Kronrod (7/15) integration of f over [a, b].
/// Either bound may be infinite; infinite ranges are mapped with x = c + tan(theta).
/// Throws NumericalError (carrying the partial estimate) if the tolerance
/// max(abs_tol, rel_tol * |I|) is not met within max_intervals subdivisions.
Result integrate(const std::function<double(double)>& f, double a, double b, const Options& opts = {});

/// Gauss-Legendre nodes and weights on [-1, 1].
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule (Newton iteration on P_n); cached per n.
const Rule& gauss_legendre(int n);

/// Nodes/weights of `rule` mapped to [a, b].
std::vector<std::pair<double, double>> mapped_nodes(const Rule& rule, double a, double b);

/// Outcome of integrating over a domain whose infinite ends are approached by doubling.
struct ExpandingResult {
  double value = 0.0;
  bool finite = true;
  /// (half-width of the truncation, running value) after each doubling.
  std::vector<std::pair<double, double>> trace;
};

struct ExpandingOptions {
  Options inner{};
  double initial_width = 1.0;
  int doublings = 10;
  /// Growth factor across the last three doublings above which the integral is declared infinite.
  double growth_factor = 1.01;
};

/// Integrates exp(log_f(z)) over (lo, hi), where either end may be infinite.
/// Finite ends are integrated directly; infinite ends are truncated at
/// anchor -/+ w with w doubling. The integral is declared infinite when the
/// running value grows by more than growth_factor across the last three
/// doublings, or when it overflows.
ExpandingResult integrate_expanding(const std::function<double(double)>& log_f, double lo, double hi,
                                    const ExpandingOptions& opts = {});

}  // namespace flexlmm::quad
