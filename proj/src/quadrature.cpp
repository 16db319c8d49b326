#include "flexlmm/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <queue>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "flexlmm/errors.hpp"

namespace flexlmm::quad {

namespace {

using Kronrod = boost::math::quadrature::gauss_kronrod<double, 15>;

struct Piece {
  double a;
  double b;
  double value;
  double error;
  bool operator<(const Piece& o) const { return error < o.error; }
};

Piece rule_on(const std::function<double(double)>& g, double a, double b) {
  double err = 0.0;
  // max_depth = 0: a single 15-point Kronrod evaluation with its embedded Gauss error estimate.
  const double v = Kronrod::integrate(g, a, b, 0, 0.0, &err);
  return {a, b, v, err};
}

Result adaptive_finite(const std::function<double(double)>& g, double a, double b, const Options& opts) {
  if (a == b) return {};
  std::priority_queue<Piece> heap;
  Piece first = rule_on(g, a, b);
  if (!std::isfinite(first.value)) {
    throw NumericalError("adaptive quadrature: non-finite integrand", first.value, first.error);
  }
  double total = first.value;
  double total_err = first.error;
  heap.push(first);
  int intervals = 1;
  while (total_err > std::max(opts.abs_tol, opts.rel_tol * std::abs(total))) {
    if (intervals >= opts.max_intervals) {
      throw NumericalError("adaptive quadrature did not converge", total, total_err);
    }
    Piece worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      throw NumericalError("adaptive quadrature: interval cannot be subdivided further", total, total_err);
    }
    Piece left = rule_on(g, worst.a, mid);
    Piece right = rule_on(g, mid, worst.b);
    total += left.value + right.value - worst.value;
    total_err += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++intervals;
    if (!std::isfinite(left.value) || !std::isfinite(right.value)) {
      throw NumericalError("adaptive quadrature: non-finite integrand", kInf, total_err);
    }
  }
  // Re-sum to shed accumulated rounding in the running totals.
  double v = 0.0;
  double e = 0.0;
  while (!heap.empty()) {
    v += heap.top().value;
    e += heap.top().error;
    heap.pop();
  }
  return {v, e, intervals};
}

}  // namespace

Result integrate(const std::function<double(double)>& f, double a, double b, const Options& opts) {
  if (a > b) {
    Result r = integrate(f, b, a, opts);
    r.value = -r.value;
    return r;
  }
  constexpr double half_pi = std::numbers::pi / 2.0;
  const bool inf_a = std::isinf(a);
  const bool inf_b = std::isinf(b);
  if (!inf_a && !inf_b) return adaptive_finite(f, a, b, opts);

  auto sec2 = [](double t) {
    const double c = std::cos(t);
    return 1.0 / (c * c);
  };
  if (inf_a && inf_b) {
    auto g = [&](double t) { return f(std::tan(t)) * sec2(t); };
    return adaptive_finite(g, -half_pi, half_pi, opts);
  }
  if (inf_b) {
    auto g = [&](double t) { return f(a + std::tan(t)) * sec2(t); };
    return adaptive_finite(g, 0.0, half_pi, opts);
  }
  auto g = [&](double t) { return f(b + std::tan(t)) * sec2(t); };
  return adaptive_finite(g, -half_pi, 0.0, opts);
}

const Rule& gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, Rule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  if (n < 1) throw DomainError("gauss_legendre: n must be positive");

  Rule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return cache.emplace(n, std::move(rule)).first->second;
}

std::vector<std::pair<double, double>> mapped_nodes(const Rule& rule, double a, double b) {
  std::vector<std::pair<double, double>> out(rule.nodes.size());
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    out[i] = {mid + half * rule.nodes[i], half * rule.weights[i]};
  }
  return out;
}

ExpandingResult integrate_expanding(const std::function<double(double)>& log_f, double lo, double hi,
                                    const ExpandingOptions& opts) {
  auto f = [&](double z) { return std::exp(log_f(z)); };
  // Overflow of the integrand is itself evidence of divergence.
  auto piece = [&](double a, double b) {
    try {
      return integrate(f, a, b, opts.inner).value;
    } catch (const NumericalError& e) {
      if (!std::isfinite(e.partial_estimate())) return kInf;
      throw;
    }
  };
  ExpandingResult out;
  const bool inf_lo = std::isinf(lo);
  const bool inf_hi = std::isinf(hi);
  if (!inf_lo && !inf_hi) {
    out.value = piece(lo, hi);
    out.finite = std::isfinite(out.value);
    out.trace.emplace_back(0.5 * (hi - lo), out.value);
    return out;
  }

  // Anchor: the finite end if there is one, else the origin.
  const double anchor = inf_lo && inf_hi ? 0.0 : (inf_lo ? hi : lo);
  double width = opts.initial_width;
  double value = 0.0;
  if (inf_lo && inf_hi) {
    value = piece(anchor - width, anchor + width);
  } else if (inf_hi) {
    value = piece(anchor, anchor + width);
  } else {
    value = piece(anchor - width, anchor);
  }
  out.trace.emplace_back(width, value);

  for (int j = 0; j < opts.doublings; ++j) {
    const double next = 2.0 * width;
    double shell = 0.0;
    if (inf_hi) shell += piece(anchor + width, anchor + next);
    if (inf_lo) shell += piece(anchor - next, anchor - width);
    value += shell;
    width = next;
    out.trace.emplace_back(width, value);
    if (!std::isfinite(value)) break;
    // Last three shells negligible: the tail has converged.
    const std::size_t m = out.trace.size();
    if (m >= 4 && value > 0.0 && (value - out.trace[m - 4].second) <= 1e-13 * value) break;
  }

  out.value = value;
  const std::size_t m = out.trace.size();
  if (!std::isfinite(value)) {
    out.finite = false;
  } else if (m >= 4) {
    const double earlier = out.trace[m - 4].second;
    out.finite = !(earlier > 0.0 ? value / earlier > opts.growth_factor : value > 0.0);
  }
  if (!out.finite) out.value = kInf;
  return out;
}

}  // namespace flexlmm::quad
