#include "flexlmm/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "flexlmm/errors.hpp"
#include "flexlmm/quadrature.hpp"

namespace flexlmm {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

}  // namespace

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double log_norm_pdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }

double norm_cdf(double x) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(norm_cdf(x));
  if (std::isinf(x)) return -std::numeric_limits<double>::infinity();
  // Asymptotic Mills-ratio series for the far lower tail.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - kLogSqrt2Pi + std::log(series);
}

double norm_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double bvn_cdf(double h, double k, double rho) {
  if (std::isnan(h) || std::isnan(k) || std::isnan(rho)) throw DomainError("bvn_cdf: NaN argument");
  if (h == -quad::kInf || k == -quad::kInf) return 0.0;
  if (h == quad::kInf) return norm_cdf(k);
  if (k == quad::kInf) return norm_cdf(h);
  rho = std::clamp(rho, -1.0, 1.0);

  // Plackett's integrand on the central range, in theta.
  auto central = [h, k](double theta) {
    const double s = std::sin(theta);
    return std::exp((h * k * s - 0.5 * (h * h + k * k)) / (1.0 - s * s));
  };
  // Near theta = +/- pi/2, in the distance e from the end: cos(theta) = sin(e) and 1 +/- sin(theta) = 1 + cos(e),
  // both exact for small e. The factor exp(-d^2 / (2 sin^2 e)) has a boundary layer of width ~|d|.
  auto near_end = [h, k](double e, bool upper) {
    const double c = std::sin(e);
    if (c <= 0.0) return 0.0;
    const double d = upper ? h - k : h + k;
    const double hk = upper ? h * k : -h * k;
    return std::exp(-(d * d / (2.0 * c * c) + hk / (1.0 + std::cos(e))));
  };
  auto piece = [](const std::function<double(double)>& f, double a, double b) {
    try {
      return quad::integrate(f, a, b, {1e-15, 1e-12, 400}).value;
    } catch (const NumericalError& e) {
      // Thin boundary layers can stall at the rounding floor just above the target.
      if (e.error_estimate() > 1e-11) throw;
      return e.partial_estimate();
    }
  };
  // Integral over e in [0, width] from the end at +pi/2 (upper) or -pi/2, split geometrically down to |d|.
  auto end_integral = [&](double width, bool upper) {
    const double d = std::abs(upper ? h - k : h + k);
    std::vector<double> cuts = {0.0};
    for (double m : {1e-1, 1.0, 1e1, 1e2, 1e3}) {
      if (d * m > cuts.back() && d * m < width) cuts.push_back(d * m);
    }
    cuts.push_back(width);
    auto f = [&](double e) { return near_end(e, upper); };
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j) total += piece(f, cuts[j], cuts[j + 1]);
    return total / (2.0 * std::numbers::pi);
  };

  double p = 0.0;
  if (std::abs(rho) <= 0.925) {
    p = norm_cdf(h) * norm_cdf(k) + piece(central, 0.0, std::asin(rho)) / (2.0 * std::numbers::pi);
  } else if (rho > 0.0) {
    p = norm_cdf(std::min(h, k)) - end_integral(std::acos(rho), true);
  } else {
    p = std::max(0.0, norm_cdf(h) - norm_cdf(-k)) + end_integral(std::acos(-rho), false);
  }
  return std::clamp(p, 0.0, 1.0);
}

double tvn_cdf_by_conditioning(const double h[3], const Eigen::Matrix3d& r, double abs_tol) {
  for (int i = 0; i < 3; ++i) {
    if (h[i] == -quad::kInf) return 0.0;
  }
  // Pivot on the variable whose largest correlation with the others is smallest.
  int pivot = 0;
  double best = 2.0;
  for (int i = 0; i < 3; ++i) {
    double worst = 0.0;
    for (int j = 0; j < 3; ++j) {
      if (j != i) worst = std::max(worst, std::abs(r(i, j)));
    }
    if (worst < best) {
      best = worst;
      pivot = i;
    }
  }
  const int j = (pivot + 1) % 3;
  const int k = (pivot + 2) % 3;
  const double rij = std::clamp(r(pivot, j), -1.0, 1.0);
  const double rik = std::clamp(r(pivot, k), -1.0, 1.0);
  const double sj = std::sqrt(std::max(0.0, 1.0 - rij * rij));
  const double sk = std::sqrt(std::max(0.0, 1.0 - rik * rik));

  if (norm_cdf(h[pivot]) <= 0.0) return 0.0;
  if (sj < 1e-12 || sk < 1e-12) {
    // Degenerate pair: one coordinate is a deterministic multiple of the pivot.
    const int other = sj < 1e-12 ? j : k;
    const int rest = other == j ? k : j;
    const double r_other = other == j ? rij : rik;
    // X_other = r_other * X_pivot, so the event is a half-line in X_pivot.
    double lo = -quad::kInf;
    double hi = h[pivot];
    if (r_other > 0.0) {
      hi = std::min(hi, h[other] / r_other);
    } else {
      lo = h[other] / r_other;
    }
    if (!(hi > lo)) return 0.0;
    const double r_rest = r(pivot, rest);
    if (std::abs(r(other, rest)) > 1.0 - 1e-12 && std::abs(r_rest) > 1.0 - 1e-12) {
      if (r_rest > 0.0) hi = std::min(hi, h[rest] / r_rest);
      else lo = std::max(lo, h[rest] / r_rest);
      return hi > lo ? norm_cdf(hi) - norm_cdf(lo) : 0.0;
    }
    const double s_rest = std::sqrt(std::max(1e-300, 1.0 - r_rest * r_rest));
    auto g = [&](double x) { return norm_pdf(x) * norm_cdf((h[rest] - r_rest * x) / s_rest); };
    const double a = std::max(lo, -38.0);
    const double b = std::min(hi, 38.0);
    if (!(b > a)) return 0.0;
    return quad::integrate(g, a, b, {abs_tol * 1e-4, 1e-10, 2000}).value;
  }
  const double rho = (r(j, k) - rij * rik) / (sj * sk);

  // Integrate phi(x) times the conditional bivariate CDF over x in (-inf, h_pivot];
  // below -8.5 the mass is negligible.
  const double hi = std::min(h[pivot], 8.5);
  if (!(hi > -8.5)) return 0.0;
  auto g = [&](double x) { return norm_pdf(x) * bvn_cdf((h[j] - rij * x) / sj, (h[k] - rik * x) / sk, rho); };
  return std::clamp(quad::integrate(g, -8.5, hi, {abs_tol, 1e-10, 2000}).value, 0.0, 1.0);
}

double tvn_cdf(const double h[3], const Eigen::Matrix3d& r, double abs_tol) {
  for (int i = 0; i < 3; ++i) {
    if (std::isnan(h[i])) throw DomainError("tvn_cdf: NaN argument");
    if (h[i] == -quad::kInf) return 0.0;
  }
  for (int i = 0; i < 3; ++i) {
    if (h[i] == quad::kInf) {
      const int j = (i + 1) % 3;
      const int k = (i + 2) % 3;
      return bvn_cdf(h[j], h[k], r(j, k));
    }
  }
  // Variable 0 is the one outside the most correlated pair; its correlations are
  // switched on along t in [0, 1] and the derivative follows Plackett's identity.
  int first = 0;
  double largest = -1.0;
  for (int i = 0; i < 3; ++i) {
    const double c = std::abs(r((i + 1) % 3, (i + 2) % 3));
    if (c > largest) {
      largest = c;
      first = i;
    }
  }
  const int second = (first + 1) % 3;
  const int third = (first + 2) % 3;
  const double h1 = h[first];
  const double h2 = h[second];
  const double h3 = h[third];
  const double r12 = std::clamp(r(first, second), -1.0, 1.0);
  const double r13 = std::clamp(r(first, third), -1.0, 1.0);
  const double r23 = std::clamp(r(second, third), -1.0, 1.0);
  const double det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
  if (largest > 0.995 || det < 1e-6) return tvn_cdf_by_conditioning(h, r, abs_tol);

  const double base = norm_cdf(h1) * bvn_cdf(h2, h3, r23);
  if (r12 == 0.0 && r13 == 0.0) return std::clamp(base, 0.0, 1.0);

  // d/dr_{1j} Phi_3 = phi_2(h_1, h_j; r_1j) Phi((h_k - E[X_k | h_1, h_j]) / sd).
  auto partial = [](double a, double b, double c, double rab, double rac, double rbc) {
    const double s2 = 1.0 - rab * rab;
    const double q = (a * a - 2.0 * rab * a * b + b * b) / (2.0 * s2);
    const double phi2 = std::exp(-q) / (2.0 * std::numbers::pi * std::sqrt(s2));
    const double ba = (rac - rab * rbc) / s2;
    const double bb = (rbc - rab * rac) / s2;
    const double var = 1.0 - ba * rac - bb * rbc;
    if (var <= 0.0) return phi2 * (c - ba * a - bb * b >= 0.0 ? 1.0 : 0.0);
    return phi2 * norm_cdf((c - ba * a - bb * b) / std::sqrt(var));
  };
  auto g = [&](double t) {
    const double a12 = t * r12;
    const double a13 = t * r13;
    return r12 * partial(h1, h2, h3, a12, a13, r23) + r13 * partial(h1, h3, h2, a13, a12, r23);
  };
  const double inc = quad::integrate(g, 0.0, 1.0, {abs_tol, 1e-10, 2000}).value;
  return std::clamp(base + inc, 0.0, 1.0);
}

double positive_orthant_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double abs_tol) {
  const Eigen::Index q = mean.size();
  if (cov.rows() != q || cov.cols() != q) throw DimensionError("orthant_probability: covariance shape");
  Eigen::VectorXd sd(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    if (!(cov(i, i) > 0.0)) throw DomainError("orthant_probability: non-positive variance");
    sd(i) = std::sqrt(cov(i, i));
  }
  // P(V > 0) = P(Z < mean / sd) with Z standardised.
  double t[3];
  for (Eigen::Index i = 0; i < q; ++i) t[i] = mean(i) / sd(i);
  auto corr = [&](Eigen::Index a, Eigen::Index b) { return cov(a, b) / (sd(a) * sd(b)); };
  switch (q) {
    case 1:
      return norm_cdf(t[0]);
    case 2:
      return bvn_cdf(t[0], t[1], corr(0, 1));
    case 3: {
      Eigen::Matrix3d r;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) r(a, b) = a == b ? 1.0 : corr(a, b);
      }
      return tvn_cdf(t, r, abs_tol);
    }
    default:
      throw DimensionError("orthant_probability: dimension must be 1, 2 or 3");
  }
}

double orthant_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::span<const bool> positive,
                           double abs_tol) {
  const Eigen::Index q = mean.size();
  if (static_cast<Eigen::Index>(positive.size()) != q) throw DimensionError("orthant_probability: sign pattern size");
  Eigen::VectorXd s(q);
  for (Eigen::Index i = 0; i < q; ++i) s(i) = positive[i] ? 1.0 : -1.0;
  const Eigen::VectorXd m = s.cwiseProduct(mean);
  const Eigen::MatrixXd c = s.asDiagonal() * cov * s.asDiagonal();
  return positive_orthant_probability(m, c, abs_tol);
}

}  // namespace flexlmm
