#pragma once

#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flexlmm {

using Rng = std::mt19937_64;

/// Skewness parameterisation {a(gamma), b(gamma)} of the two-piece normal.
///
/// Besides a and b on the open interval (gamma_lo, gamma_hi), a parameterisation
/// carries a bijection z <-> gamma onto the real line. Samplers move on z, and the
/// condition integrals are evaluated in z so that a and b stay accurate near the
/// ends of the domain (ab_of_z must not lose precision there).
struct SkewParameterisation {
  std::string name;
  std::function<double(double)> a;
  std::function<double(double)> b;
  double gamma_lo = 0.0;
  double gamma_hi = 0.0;
  /// h(gamma) = min{a, b} <= m and H(gamma) = a + b >= M on the whole domain.
  double m = 1.0;
  double M = 2.0;
  std::function<double(double)> to_z;
  std::function<double(double)> from_z;
  /// log |d gamma / d z|
  std::function<double(double)> log_jacobian;
  /// (a, b) evaluated directly from z.
  std::function<std::pair<double, double>(double)> ab_of_z;
  /// A point where a == b, if any.
  std::optional<double> symmetric_point;
  /// Set when a + b is the same constant on all of the domain.
  std::optional<double> constant_H;

  bool contains(double gamma) const { return gamma > gamma_lo && gamma < gamma_hi; }
};

/// {1 - gamma, 1 + gamma} on (-1, 1); z = logit((gamma + 1) / 2).
SkewParameterisation epsilon_skew();
/// {gamma, 1 / gamma} on (0, inf); z = log(gamma).
SkewParameterisation inverse_scale_factors();

/// Fills in the z-transform of a user parameterisation that supplies only a, b and the domain.
SkewParameterisation with_default_transform(SkewParameterisation p);

struct ValidationReport {
  bool ok = true;
  std::size_t grid_points = 0;
  double min_ab = 0.0;
  double max_h = 0.0;
  double min_H = 0.0;
  std::string message;
};

/// Grid check of positivity and the m/M bounds: 10^4 points spanning the domain,
/// with both ends approached geometrically.
ValidationReport validate_parameterisation(const SkewParameterisation& p, std::size_t grid_points = 10000);

/// Named parameterisations, validated at registration.
class ParameterisationRegistry {
 public:
  /// A registry holding the built-in parameterisations.
  ParameterisationRegistry();

  /// Throws DomainError if the grid validation fails or the name is taken.
  void add(SkewParameterisation p);
  std::shared_ptr<const SkewParameterisation> get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const SkewParameterisation>> entries_;
};

ParameterisationRegistry& default_registry();

/// Proper prior on a shape parameter (gamma, lambda or delta).
class ShapePrior {
 public:
  enum class Kind { Uniform, TruncatedNormal, Gamma, PointMass };

  static ShapePrior uniform(double lo, double hi);
  static ShapePrior truncated_normal(double mean, double sd, double lo, double hi);
  static ShapePrior gamma(double shape, double rate);
  static ShapePrior point_mass(double value);

  Kind kind() const { return kind_; }
  bool is_point_mass() const { return kind_ == Kind::PointMass; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }
  double point() const { return p1_; }
  /// Parameters as given at construction: (lo, hi), (mean, sd), (shape, rate) or (value, -).
  std::pair<double, double> parameters() const { return {p1_, p2_}; }

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  double quantile(double w) const;
  double sample(Rng& rng) const;
  std::string describe() const;

 private:
  ShapePrior(Kind kind, double p1, double p2, double lo, double hi);

  Kind kind_;
  double p1_;
  double p2_;
  double lo_;
  double hi_;
  double log_mass_ = 0.0;  // truncated normal: log of the retained mass
};

/// Throws DomainError unless the prior's support lies in [lo, hi] (a point mass must be inside (lo, hi)).
void require_support_within(const ShapePrior& prior, double lo, double hi, const std::string& what);

/// Density p(t | lambda) on [0, 1] defining an FSN transform of the normal.
struct FsnFamily {
  std::string name;
  std::function<double(double, double)> p;
  /// log p(Phi(z) | lambda), evaluated without passing through Phi where possible.
  std::function<double(double, double)> log_p_at_score;
  double lambda_lo = -std::numeric_limits<double>::infinity();
  double lambda_hi = std::numeric_limits<double>::infinity();
  std::optional<double> sup_bound;
  std::optional<double> inf_bound;

  bool contains(double lambda) const { return lambda >= lambda_lo && lambda <= lambda_hi; }
};

/// p == 1: the FSN transform is the identity and the density is normal.
FsnFamily uniform_fsn();
/// p[Phi(u) | lambda] = 2 Phi(lambda u): the skew-normal.
FsnFamily skew_normal_fsn();
std::shared_ptr<const FsnFamily> fsn_family_by_name(const std::string& name);

/// Mixing distribution H(tau | delta) of a scale mixture of normals.
class MixingDistribution {
 public:
  virtual ~MixingDistribution() = default;
  virtual std::string name() const = 0;
  virtual bool is_point_mass() const = 0;
  virtual double delta_lo() const = 0;
  virtual double delta_hi() const = 0;
  virtual double log_pdf(double tau, double delta) const = 0;
  virtual double quantile(double w, double delta) const = 0;
  virtual double sample(Rng& rng, double delta) const = 0;
  /// E[tau^s | delta] in closed form; nullopt when unavailable. +inf if the moment diverges.
  virtual std::optional<double> moment(double /*s*/, double /*delta*/) const { return std::nullopt; }
  /// log g(x) of SMN_q(0, sigma^2 I, delta; H) given |x|^2, if available in closed form.
  virtual std::optional<double> log_smn_pdf(double /*r2*/, int /*q*/, double /*sigma*/, double /*delta*/) const {
    return std::nullopt;
  }
};

/// tau == 1: reproduces the normal.
class PointMassMixing final : public MixingDistribution {
 public:
  std::string name() const override { return "point_mass"; }
  bool is_point_mass() const override { return true; }
  double delta_lo() const override { return -std::numeric_limits<double>::infinity(); }
  double delta_hi() const override { return std::numeric_limits<double>::infinity(); }
  double log_pdf(double, double) const override;
  double quantile(double, double) const override { return 1.0; }
  double sample(Rng&, double) const override { return 1.0; }
  std::optional<double> moment(double, double) const override { return 1.0; }
  std::optional<double> log_smn_pdf(double r2, int q, double sigma, double delta) const override;
};

/// tau ~ Gamma(delta / 2, rate delta / 2): the multivariate Student-t with delta degrees of freedom.
class GammaMixing final : public MixingDistribution {
 public:
  std::string name() const override { return "gamma"; }
  bool is_point_mass() const override { return false; }
  double delta_lo() const override { return 0.0; }
  double delta_hi() const override { return std::numeric_limits<double>::infinity(); }
  double log_pdf(double tau, double delta) const override;
  double quantile(double w, double delta) const override;
  double sample(Rng& rng, double delta) const override;
  std::optional<double> moment(double s, double delta) const override;
  std::optional<double> log_smn_pdf(double r2, int q, double sigma, double delta) const override;
};

std::shared_ptr<const MixingDistribution> mixing_by_name(const std::string& name);

/// E[tau^s | delta]: closed form when the family provides one, else adaptive quadrature.
double mixing_moment(const MixingDistribution& mixing, double s, double delta);

// Two-piece normal.
double h_gamma(double gamma, const SkewParameterisation& param);
double H_gamma(double gamma, const SkewParameterisation& param);
double tpn_log_pdf(double u, double mu, double sigma, double gamma, const SkewParameterisation& param);
double tpn_pdf(double u, double mu, double sigma, double gamma, const SkewParameterisation& param);
/// With probability b/(a+b) returns mu - sigma b |N(0,1)|, else mu + sigma a |N(0,1)|.
double tpn_sample(Rng& rng, double mu, double sigma, double gamma, const SkewParameterisation& param);

// Ferreira-Steel transforms of the normal.
double fsn_log_pdf(double u, double mu, double sigma, double lambda, const FsnFamily& family);
double fsn_pdf(double u, double mu, double sigma, double lambda, const FsnFamily& family);

/// Density of SMN_q(0, sigma^2 I, delta; H) at x. Uses the family's closed form unless
/// force_quadrature is set, in which case tau is integrated out adaptively.
double smn_pdf(std::span<const double> x, double sigma, const MixingDistribution& mixing, double delta,
               bool force_quadrature = false);

}  // namespace flexlmm
