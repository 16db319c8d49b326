#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

#include "flexlmm/distributions.hpp"

namespace flexlmm {

using Rational = boost::multiprecision::cpp_rational;

/// Parses "-0.5", "1e-3", "3/4" or "2" into an exact rational.
Rational parse_rational(const std::string& text);
/// The shortest decimal that round-trips x, read back exactly.
Rational rational_from_double(double x);
double to_double(const Rational& x);
std::string to_string(const Rational& x);

/// Hyperparameter held exactly, so that strict inequalities are decided without rounding.
struct Hyper {
  Rational exact;
  double value = 0.0;

  Hyper() = default;
  Hyper(Rational r) : exact(std::move(r)), value(to_double(exact)) {}
  static Hyper parse(const std::string& text) { return Hyper(parse_rational(text)); }
  static Hyper of(double x) { return Hyper(rational_from_double(x)); }
};

/// pi(sigma_i) proportional to sigma_i^-(2 a_i + 1) exp(-b_i / sigma_i^2), i = 0..r.
struct PowerExpPrior {
  std::vector<Hyper> a;
  std::vector<Hyper> b;
};

/// pi(sigma_0) proportional to sigma_0^-(2 a_0 + 1); pi(sigma_i) proportional to 1 / (1 + sigma_i^2 / s_i^2).
struct HalfCauchyPrior {
  Hyper a0;
  std::vector<double> s;
};

using PriorStructure = std::variant<PowerExpPrior, HalfCauchyPrior>;

/// a_0 = 0, a_1..a_r = -1/2, all b = 0.
PowerExpPrior standard_diffuse_prior(std::size_t r);

struct NormalEffects {};

struct TpnEffects {
  std::shared_ptr<const SkewParameterisation> param;
  /// One proper prior on gamma_i per factor.
  std::vector<ShapePrior> shape_priors;
};

struct FsnEffects {
  std::shared_ptr<const FsnFamily> family;
  std::vector<ShapePrior> shape_priors;
};

/// u_i ~ SMN_{q_i}(0, sigma_i^2 I, delta; H) with delta shared by all factors.
struct SmnEffects {
  std::shared_ptr<const MixingDistribution> mixing;
  ShapePrior delta_prior;
};

using RandomEffects = std::variant<NormalEffects, TpnEffects, FsnEffects, SmnEffects>;

std::string family_name(const RandomEffects& re);

struct RankOptions {
  /// Multiplies the default threshold max(rows, cols) * eps * s_max.
  double tolerance_scale = 1.0;
};

/// Numerical rank by singular values.
std::size_t numeric_rank(const Eigen::MatrixXd& m, const RankOptions& opts = {});

/// rank{(I - X (X'X)^-1 X') Z}.
std::size_t effective_rank_t(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const RankOptions& opts = {});

/// y' (I - X (X'X)^-1 X') y.
double sse(const Eigen::VectorXd& y, const Eigen::MatrixXd& X);

/// An orthonormal basis (n x (n - p)) of the orthogonal complement of col(X).
Eigen::MatrixXd residual_basis(const Eigen::MatrixXd& X);

/// y = X beta + Z u + e with a factor partition of u, a random-effects family and a prior structure.
class ModelSpec {
 public:
  /// Validates rank(X) = p < n, the factor partition and the family/prior sizes.
  ModelSpec(Eigen::MatrixXd X, Eigen::MatrixXd Z, std::vector<std::size_t> factor_sizes, RandomEffects effects,
            PriorStructure prior, RankOptions rank = {});

  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::MatrixXd& Z() const { return Z_; }
  const std::vector<std::size_t>& factor_sizes() const { return factor_sizes_; }
  const RandomEffects& effects() const { return effects_; }
  const PriorStructure& prior() const { return prior_; }
  const RankOptions& rank_options() const { return rank_; }

  std::size_t n() const { return static_cast<std::size_t>(X_.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(X_.cols()); }
  std::size_t q() const { return static_cast<std::size_t>(Z_.cols()); }
  std::size_t r() const { return factor_sizes_.size(); }
  /// Index of the first column of factor i (0-based factor index).
  std::size_t factor_offset(std::size_t i) const { return offsets_.at(i); }
  /// Factor (0-based) owning column j of Z.
  std::size_t factor_of(std::size_t j) const { return owner_.at(j); }

  std::size_t t() const { return t_; }
  /// rank of the concatenated design (X : Z).
  std::size_t rank_xz() const { return rank_xz_; }

  /// Copy with a different prior or family; re-validated.
  ModelSpec with_prior(PriorStructure prior) const;
  ModelSpec with_effects(RandomEffects effects) const;

  void check_response(const Eigen::VectorXd& y) const;

 private:
  Eigen::MatrixXd X_;
  Eigen::MatrixXd Z_;
  std::vector<std::size_t> factor_sizes_;
  RandomEffects effects_;
  PriorStructure prior_;
  RankOptions rank_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> owner_;
  std::size_t t_ = 0;
  std::size_t rank_xz_ = 0;
};

/// One-way probit model with per-group (successes, failures).
struct ProbitSpec {
  std::vector<std::pair<long, long>> group_counts;
  Hyper a1;
  std::variant<TpnEffects, FsnEffects> effects;
};

/// Balanced one-way indicator design: groups x per_group rows, intercept X.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> one_way_design(std::size_t groups, std::size_t per_group);

}  // namespace flexlmm
