#include "flexlmm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "flexlmm/errors.hpp"
#include "flexlmm/gaussian.hpp"
#include "flexlmm/quadrature.hpp"

namespace flexlmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_logistic(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
double logistic(double z) { return std::exp(log_logistic(z)); }

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

SkewParameterisation epsilon_skew() {
  SkewParameterisation p;
  p.name = "epsilon_skew";
  p.a = [](double g) { return 1.0 - g; };
  p.b = [](double g) { return 1.0 + g; };
  p.gamma_lo = -1.0;
  p.gamma_hi = 1.0;
  p.m = 1.0;
  p.M = 2.0;
  p.to_z = [](double g) { return std::log1p(g) - std::log1p(-g); };
  p.from_z = [](double z) { return std::tanh(0.5 * z); };
  p.log_jacobian = [](double z) { return std::numbers::ln2 + log_logistic(z) + log_logistic(-z); };
  p.ab_of_z = [](double z) { return std::pair{2.0 * logistic(-z), 2.0 * logistic(z)}; };
  p.symmetric_point = 0.0;
  p.constant_H = 2.0;
  return p;
}

SkewParameterisation inverse_scale_factors() {
  SkewParameterisation p;
  p.name = "inverse_scale_factors";
  p.a = [](double g) { return g; };
  p.b = [](double g) { return 1.0 / g; };
  p.gamma_lo = 0.0;
  p.gamma_hi = kInf;
  p.m = 1.0;
  p.M = 2.0;
  p.to_z = [](double g) { return std::log(g); };
  p.from_z = [](double z) { return std::exp(z); };
  p.log_jacobian = [](double z) { return z; };
  p.ab_of_z = [](double z) { return std::pair{std::exp(z), std::exp(-z)}; };
  p.symmetric_point = 1.0;
  return p;
}

SkewParameterisation with_default_transform(SkewParameterisation p) {
  const double lo = p.gamma_lo;
  const double hi = p.gamma_hi;
  if (!(hi > lo)) throw DomainError("parameterisation '" + p.name + "': empty domain");
  if (!p.to_z || !p.from_z || !p.log_jacobian) {
    if (std::isfinite(lo) && std::isfinite(hi)) {
      const double w = hi - lo;
      p.to_z = [lo, w](double g) {
        const double t = (g - lo) / w;
        return std::log(t) - std::log1p(-t);
      };
      p.from_z = [lo, w](double z) { return lo + w * logistic(z); };
      p.log_jacobian = [w](double z) { return std::log(w) + log_logistic(z) + log_logistic(-z); };
    } else if (std::isfinite(lo)) {
      p.to_z = [lo](double g) { return std::log(g - lo); };
      p.from_z = [lo](double z) { return lo + std::exp(z); };
      p.log_jacobian = [](double z) { return z; };
    } else if (std::isfinite(hi)) {
      p.to_z = [hi](double g) { return -std::log(hi - g); };
      p.from_z = [hi](double z) { return hi - std::exp(-z); };
      p.log_jacobian = [](double z) { return -z; };
    } else {
      p.to_z = [](double g) { return g; };
      p.from_z = [](double z) { return z; };
      p.log_jacobian = [](double) { return 0.0; };
    }
  }
  if (!p.ab_of_z) {
    auto a = p.a;
    auto b = p.b;
    auto from = p.from_z;
    p.ab_of_z = [a, b, from](double z) {
      const double g = from(z);
      return std::pair{a(g), b(g)};
    };
  }
  return p;
}

ValidationReport validate_parameterisation(const SkewParameterisation& p, std::size_t grid_points) {
  ValidationReport rep;
  rep.min_ab = kInf;
  rep.min_H = kInf;
  rep.max_h = 0.0;
  const double lo = p.gamma_lo;
  const double hi = p.gamma_hi;
  if (!p.a || !p.b || !(hi > lo)) {
    rep.ok = false;
    rep.message = "parameterisation needs a, b and a non-empty domain";
    return rep;
  }

  std::vector<double> grid;
  grid.reserve(grid_points);
  const std::size_t n_interior = grid_points / 2;
  const std::size_t n_edge = (grid_points - n_interior) / 2;
  // Interior: uniform on finite stretches, geometric spread on infinite ones.
  const double span_lo = std::isfinite(lo) ? lo : (std::isfinite(hi) ? hi - 1e6 : -1e6);
  const double span_hi = std::isfinite(hi) ? hi : (std::isfinite(lo) ? lo + 1e6 : 1e6);
  for (std::size_t i = 0; i < n_interior; ++i) {
    grid.push_back(span_lo + (span_hi - span_lo) * (static_cast<double>(i) + 0.5) / n_interior);
  }
  const double width = std::isfinite(lo) && std::isfinite(hi) ? hi - lo : 1.0;
  for (std::size_t i = 0; i < n_edge; ++i) {
    const double e = 1.0 + 11.0 * static_cast<double>(i) / std::max<std::size_t>(1, n_edge - 1);
    const double d = std::pow(10.0, -e);
    grid.push_back(std::isfinite(lo) ? lo + width * d : -std::pow(10.0, e));
    grid.push_back(std::isfinite(hi) ? hi - width * d : std::pow(10.0, e));
  }

  constexpr double slack = 1e-12;
  for (double g : grid) {
    if (!p.contains(g)) continue;
    const double a = p.a(g);
    const double b = p.b(g);
    // Far out on an infinite domain a or b may over/underflow; such points carry no information.
    const bool overflow = a == 0.0 || b == 0.0 || std::isinf(a) || std::isinf(b);
    if (overflow && ((g < 0.0 && !std::isfinite(lo)) || (g > 0.0 && !std::isfinite(hi)))) continue;
    ++rep.grid_points;
    rep.min_ab = std::min({rep.min_ab, a, b});
    rep.max_h = std::max(rep.max_h, std::min(a, b));
    rep.min_H = std::min(rep.min_H, a + b);
    if (!(a > 0.0) || !(b > 0.0) || std::isinf(a) || std::isinf(b)) {
      rep.ok = false;
      rep.message = "a or b not positive at gamma = " + fmt_double(g);
      return rep;
    }
    if (std::min(a, b) > p.m * (1.0 + slack)) {
      rep.ok = false;
      rep.message = "min{a,b} exceeds m at gamma = " + fmt_double(g);
      return rep;
    }
    if (a + b < p.M * (1.0 - slack)) {
      rep.ok = false;
      rep.message = "a+b falls below M at gamma = " + fmt_double(g);
      return rep;
    }
  }
  return rep;
}

ParameterisationRegistry::ParameterisationRegistry() {
  add(epsilon_skew());
  add(inverse_scale_factors());
}

void ParameterisationRegistry::add(SkewParameterisation p) {
  p = with_default_transform(std::move(p));
  const ValidationReport rep = validate_parameterisation(p);
  if (!rep.ok) throw DomainError("parameterisation '" + p.name + "' rejected: " + rep.message);
  std::lock_guard<std::mutex> lock(mu_);
  if (entries_.count(p.name)) throw DomainError("parameterisation '" + p.name + "' already registered");
  auto name = p.name;
  entries_.emplace(std::move(name), std::make_shared<const SkewParameterisation>(std::move(p)));
}

std::shared_ptr<const SkewParameterisation> ParameterisationRegistry::get(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameterisation '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterisationRegistry::names() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

ParameterisationRegistry& default_registry() {
  static ParameterisationRegistry registry;
  return registry;
}

// ---------------------------------------------------------------------------
// ShapePrior

ShapePrior::ShapePrior(Kind kind, double p1, double p2, double lo, double hi)
    : kind_(kind), p1_(p1), p2_(p2), lo_(lo), hi_(hi) {}

ShapePrior ShapePrior::uniform(double lo, double hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && hi > lo)) throw DomainError("uniform prior needs finite lo < hi");
  return ShapePrior(Kind::Uniform, lo, hi, lo, hi);
}

ShapePrior ShapePrior::truncated_normal(double mean, double sd, double lo, double hi) {
  if (!(sd > 0.0) || !(hi > lo)) throw DomainError("truncated normal prior needs sd > 0 and lo < hi");
  ShapePrior p(Kind::TruncatedNormal, mean, sd, lo, hi);
  const double mass = norm_cdf((hi - mean) / sd) - norm_cdf((lo - mean) / sd);
  if (!(mass > 0.0)) throw DomainError("truncated normal prior has no mass on its support");
  p.log_mass_ = std::log(mass);
  return p;
}

ShapePrior ShapePrior::gamma(double shape, double rate) {
  if (!(shape > 0.0 && rate > 0.0)) throw DomainError("gamma prior needs shape > 0 and rate > 0");
  return ShapePrior(Kind::Gamma, shape, rate, 0.0, kInf);
}

ShapePrior ShapePrior::point_mass(double value) {
  if (!std::isfinite(value)) throw DomainError("point-mass prior needs a finite value");
  return ShapePrior(Kind::PointMass, value, 0.0, value, value);
}

double ShapePrior::log_pdf(double x) const {
  switch (kind_) {
    case Kind::Uniform:
      return (x >= lo_ && x <= hi_) ? -std::log(hi_ - lo_) : -kInf;
    case Kind::TruncatedNormal:
      if (x < lo_ || x > hi_) return -kInf;
      return log_norm_pdf((x - p1_) / p2_) - std::log(p2_) - log_mass_;
    case Kind::Gamma:
      if (x <= 0.0) return -kInf;
      return p1_ * std::log(p2_) - std::lgamma(p1_) + (p1_ - 1.0) * std::log(x) - p2_ * x;
    case Kind::PointMass:
      throw DomainError("point-mass prior has no density");
  }
  return -kInf;
}

double ShapePrior::pdf(double x) const { return std::exp(log_pdf(x)); }

double ShapePrior::cdf(double x) const {
  switch (kind_) {
    case Kind::Uniform:
      return std::clamp((x - lo_) / (hi_ - lo_), 0.0, 1.0);
    case Kind::TruncatedNormal: {
      if (x <= lo_) return 0.0;
      if (x >= hi_) return 1.0;
      const double a = norm_cdf((lo_ - p1_) / p2_);
      return (norm_cdf((x - p1_) / p2_) - a) / std::exp(log_mass_);
    }
    case Kind::Gamma:
      return x <= 0.0 ? 0.0 : boost::math::gamma_p(p1_, p2_ * x);
    case Kind::PointMass:
      return x >= p1_ ? 1.0 : 0.0;
  }
  return 0.0;
}

double ShapePrior::quantile(double w) const {
  if (!(w >= 0.0 && w <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  switch (kind_) {
    case Kind::Uniform:
      return lo_ + w * (hi_ - lo_);
    case Kind::TruncatedNormal: {
      const double a = norm_cdf((lo_ - p1_) / p2_);
      return std::clamp(p1_ + p2_ * norm_quantile(a + w * std::exp(log_mass_)), lo_, hi_);
    }
    case Kind::Gamma:
      if (w <= 0.0) return 0.0;
      if (w >= 1.0) return kInf;
      return boost::math::gamma_p_inv(p1_, w) / p2_;
    case Kind::PointMass:
      return p1_;
  }
  return p1_;
}

double ShapePrior::sample(Rng& rng) const {
  switch (kind_) {
    case Kind::Uniform:
      return std::uniform_real_distribution<double>(lo_, hi_)(rng);
    case Kind::TruncatedNormal: {
      // Inverse CDF on an open uniform so the draw stays inside the support.
      double w = 0.0;
      do {
        w = std::generate_canonical<double, 53>(rng);
      } while (w <= 0.0);
      return quantile(w);
    }
    case Kind::Gamma:
      return std::gamma_distribution<double>(p1_, 1.0 / p2_)(rng);
    case Kind::PointMass:
      return p1_;
  }
  return p1_;
}

std::string ShapePrior::describe() const {
  switch (kind_) {
    case Kind::Uniform:
      return "uniform(" + fmt_double(lo_) + ", " + fmt_double(hi_) + ")";
    case Kind::TruncatedNormal:
      return "truncated_normal(" + fmt_double(p1_) + ", " + fmt_double(p2_) + "; " + fmt_double(lo_) + ", " +
             fmt_double(hi_) + ")";
    case Kind::Gamma:
      return "gamma(" + fmt_double(p1_) + ", " + fmt_double(p2_) + ")";
    case Kind::PointMass:
      return "point_mass(" + fmt_double(p1_) + ")";
  }
  return "?";
}

void require_support_within(const ShapePrior& prior, double lo, double hi, const std::string& what) {
  const bool ok = prior.is_point_mass() ? (prior.point() > lo && prior.point() < hi)
                                        : (prior.lower() >= lo && prior.upper() <= hi);
  if (!ok) {
    throw DomainError(what + ": prior " + prior.describe() + " has support outside (" + fmt_double(lo) + ", " +
                      fmt_double(hi) + ")");
  }
}

// ---------------------------------------------------------------------------
// FSN families

FsnFamily uniform_fsn() {
  FsnFamily f;
  f.name = "uniform";
  f.p = [](double t, double) { return (t >= 0.0 && t <= 1.0) ? 1.0 : 0.0; };
  f.log_p_at_score = [](double, double) { return 0.0; };
  f.sup_bound = 1.0;
  f.inf_bound = 1.0;
  return f;
}

FsnFamily skew_normal_fsn() {
  FsnFamily f;
  f.name = "skew_normal";
  f.p = [](double t, double lambda) {
    if (t <= 0.0 || t >= 1.0) return t == 0.0 || t == 1.0 ? 2.0 * norm_cdf(lambda * norm_quantile(t)) : 0.0;
    return 2.0 * norm_cdf(lambda * norm_quantile(t));
  };
  f.log_p_at_score = [](double z, double lambda) { return std::numbers::ln2 + log_norm_cdf(lambda * z); };
  f.sup_bound = 2.0;
  f.inf_bound = 0.0;
  return f;
}

std::shared_ptr<const FsnFamily> fsn_family_by_name(const std::string& name) {
  static const auto uniform = std::make_shared<const FsnFamily>(uniform_fsn());
  static const auto skew = std::make_shared<const FsnFamily>(skew_normal_fsn());
  if (name == "uniform") return uniform;
  if (name == "skew_normal") return skew;
  throw ConfigError("unknown FSN family '" + name + "'");
}

// ---------------------------------------------------------------------------
// Mixing distributions

double PointMassMixing::log_pdf(double tau, double) const { return tau == 1.0 ? 0.0 : -kInf; }

std::optional<double> PointMassMixing::log_smn_pdf(double r2, int q, double sigma, double) const {
  return -0.5 * q * std::log(2.0 * std::numbers::pi * sigma * sigma) - r2 / (2.0 * sigma * sigma);
}

double GammaMixing::log_pdf(double tau, double delta) const {
  if (tau <= 0.0) return -kInf;
  const double k = 0.5 * delta;
  return k * std::log(k) - std::lgamma(k) + (k - 1.0) * std::log(tau) - k * tau;
}

double GammaMixing::quantile(double w, double delta) const {
  const double k = 0.5 * delta;
  if (w <= 0.0) return 0.0;
  if (w >= 1.0) return kInf;
  return boost::math::gamma_p_inv(k, w) / k;
}

double GammaMixing::sample(Rng& rng, double delta) const {
  const double k = 0.5 * delta;
  return std::gamma_distribution<double>(k, 1.0 / k)(rng);
}

std::optional<double> GammaMixing::moment(double s, double delta) const {
  const double k = 0.5 * delta;
  if (k + s <= 0.0) return kInf;
  return std::exp(std::lgamma(k + s) - std::lgamma(k) - s * std::log(k));
}

std::optional<double> GammaMixing::log_smn_pdf(double r2, int q, double sigma, double delta) const {
  const double half = 0.5 * (delta + q);
  return std::lgamma(half) - std::lgamma(0.5 * delta) - 0.5 * q * std::log(delta * std::numbers::pi) -
         q * std::log(sigma) - half * std::log1p(r2 / (delta * sigma * sigma));
}

std::shared_ptr<const MixingDistribution> mixing_by_name(const std::string& name) {
  static const auto point = std::make_shared<const PointMassMixing>();
  static const auto gamma = std::make_shared<const GammaMixing>();
  if (name == "point_mass") return point;
  if (name == "gamma") return gamma;
  throw ConfigError("unknown mixing distribution '" + name + "'");
}

double mixing_moment(const MixingDistribution& mixing, double s, double delta) {
  if (auto m = mixing.moment(s, delta)) return *m;
  // Integrate tau^s dH over t = log(tau).
  auto log_f = [&](double t) { return s * t + mixing.log_pdf(std::exp(t), delta) + t; };
  return quad::integrate_expanding(log_f, -kInf, kInf).value;
}

// ---------------------------------------------------------------------------
// Densities

namespace {

void check_tpn_args(double sigma, double gamma, const SkewParameterisation& param) {
  if (!(sigma > 0.0)) throw DomainError("two-piece normal: sigma must be positive");
  if (!param.contains(gamma)) {
    throw DomainError("two-piece normal: gamma = " + fmt_double(gamma) + " outside the domain of " + param.name);
  }
}

}  // namespace

double h_gamma(double gamma, const SkewParameterisation& param) {
  if (!param.contains(gamma)) throw DomainError("h(gamma): gamma outside the domain of " + param.name);
  return std::min(param.a(gamma), param.b(gamma));
}

double H_gamma(double gamma, const SkewParameterisation& param) {
  if (!param.contains(gamma)) throw DomainError("H(gamma): gamma outside the domain of " + param.name);
  return param.a(gamma) + param.b(gamma);
}

double tpn_log_pdf(double u, double mu, double sigma, double gamma, const SkewParameterisation& param) {
  check_tpn_args(sigma, gamma, param);
  const double a = param.a(gamma);
  const double b = param.b(gamma);
  const double scale = u < mu ? b : a;
  return std::numbers::ln2 - std::log(sigma * (a + b)) + log_norm_pdf((u - mu) / (sigma * scale));
}

double tpn_pdf(double u, double mu, double sigma, double gamma, const SkewParameterisation& param) {
  return std::exp(tpn_log_pdf(u, mu, sigma, gamma, param));
}

double tpn_sample(Rng& rng, double mu, double sigma, double gamma, const SkewParameterisation& param) {
  check_tpn_args(sigma, gamma, param);
  const double a = param.a(gamma);
  const double b = param.b(gamma);
  const double w = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double z = std::abs(std::normal_distribution<double>(0.0, 1.0)(rng));
  return w < b / (a + b) ? mu - sigma * b * z : mu + sigma * a * z;
}

double fsn_log_pdf(double u, double mu, double sigma, double lambda, const FsnFamily& family) {
  if (!(sigma > 0.0)) throw DomainError("FSN: sigma must be positive");
  if (!family.contains(lambda)) throw DomainError("FSN: lambda outside the domain of " + family.name);
  const double z = (u - mu) / sigma;
  return -std::log(sigma) + family.log_p_at_score(z, lambda) + log_norm_pdf(z);
}

double fsn_pdf(double u, double mu, double sigma, double lambda, const FsnFamily& family) {
  return std::exp(fsn_log_pdf(u, mu, sigma, lambda, family));
}

double smn_pdf(std::span<const double> x, double sigma, const MixingDistribution& mixing, double delta,
               bool force_quadrature) {
  if (!(sigma > 0.0)) throw DomainError("SMN: sigma must be positive");
  if (!mixing.is_point_mass() && !(delta > mixing.delta_lo() && delta < mixing.delta_hi())) {
    throw DomainError("SMN: delta outside the domain of " + mixing.name());
  }
  const int q = static_cast<int>(x.size());
  if (q < 1) throw DimensionError("SMN: empty argument");
  double r2 = 0.0;
  for (double v : x) r2 += v * v;
  if (!force_quadrature || mixing.is_point_mass()) {
    if (auto closed = mixing.log_smn_pdf(r2, q, sigma, delta)) return std::exp(*closed);
  }
  const double log_norm = -0.5 * q * std::log(2.0 * std::numbers::pi * sigma * sigma);
  auto f = [&](double t) {
    const double tau = std::exp(t);
    return std::exp(log_norm + 0.5 * q * t - tau * r2 / (2.0 * sigma * sigma) + mixing.log_pdf(tau, delta) + t);
  };
  return quad::integrate(f, -kInf, kInf).value;
}

}  // namespace flexlmm
