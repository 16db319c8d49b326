#include "flexlmm/model.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <regex>

#include "flexlmm/errors.hpp"

namespace flexlmm {

namespace bmp = boost::multiprecision;

Rational parse_rational(const std::string& text) {
  static const std::regex decimal(R"(^\s*([+-]?)(\d*)(?:\.(\d*))?(?:[eE]([+-]?\d+))?\s*$)");
  static const std::regex fraction(R"(^\s*([+-]?\d+)\s*/\s*(\d+)\s*$)");
  std::smatch m;
  if (std::regex_match(text, m, fraction)) {
    const bmp::cpp_int num(m[1].str());
    const bmp::cpp_int den(m[2].str());
    if (den == 0) throw ParseError("zero denominator in '" + text + "'");
    return Rational(num, den);
  }
  if (!std::regex_match(text, m, decimal) || (m[2].length() == 0 && m[3].length() == 0)) {
    throw ParseError("not a decimal number: '" + text + "'");
  }
  const std::string digits = m[2].str() + m[3].str();
  bmp::cpp_int num(digits.empty() ? std::string("0") : digits);
  long exp10 = -static_cast<long>(m[3].length());
  if (m[4].matched) {
    const std::string e = m[4].str();
    if (e.size() > 6) throw ParseError("exponent out of range in '" + text + "'");
    exp10 += std::stol(e);
  }
  if (m[1].str() == "-") num = -num;
  const bmp::cpp_int scale = bmp::pow(bmp::cpp_int(10), static_cast<unsigned>(std::abs(exp10)));
  return exp10 >= 0 ? Rational(num * scale) : Rational(num, scale);
}

Rational rational_from_double(double x) {
  if (!std::isfinite(x)) throw DomainError("hyperparameter must be finite");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return parse_rational(std::string(buf, res.ptr));
}

double to_double(const Rational& x) { return x.convert_to<double>(); }

std::string to_string(const Rational& x) {
  const bmp::cpp_int num = bmp::numerator(x);
  const bmp::cpp_int den = bmp::denominator(x);
  if (den == 1) return num.str();
  // Terminating decimals print as decimals, everything else as num/den.
  bmp::cpp_int d = den;
  int twos = 0;
  int fives = 0;
  while (d % 2 == 0) {
    d /= 2;
    ++twos;
  }
  while (d % 5 == 0) {
    d /= 5;
    ++fives;
  }
  if (d != 1) return num.str() + "/" + den.str();
  const int places = std::max(twos, fives);
  const bmp::cpp_int scaled = bmp::abs(num) * bmp::pow(bmp::cpp_int(10), places) / den;
  std::string s = scaled.str();
  if (static_cast<int>(s.size()) <= places) s.insert(0, places - s.size() + 1, '0');
  s.insert(s.size() - places, ".");
  return (num < 0 ? "-" : "") + s;
}

PowerExpPrior standard_diffuse_prior(std::size_t r) {
  PowerExpPrior p;
  p.a.push_back(Hyper(Rational(0)));
  p.b.push_back(Hyper(Rational(0)));
  for (std::size_t i = 0; i < r; ++i) {
    p.a.push_back(Hyper(Rational(-1, 2)));
    p.b.push_back(Hyper(Rational(0)));
  }
  return p;
}

std::string family_name(const RandomEffects& re) {
  return std::visit(
      [](const auto& f) -> std::string {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, NormalEffects>) return "normal";
        if constexpr (std::is_same_v<T, TpnEffects>) return "tpn";
        if constexpr (std::is_same_v<T, FsnEffects>) return "fsn";
        if constexpr (std::is_same_v<T, SmnEffects>) return "smn";
      },
      re);
}

std::size_t numeric_rank(const Eigen::MatrixXd& m, const RankOptions& opts) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  const double threshold = opts.tolerance_scale * static_cast<double>(std::max(m.rows(), m.cols())) *
                           std::numeric_limits<double>::epsilon() * s(0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > threshold) ++rank;
  }
  return rank;
}

std::size_t effective_rank_t(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const RankOptions& opts) {
  if (X.rows() != Z.rows()) throw DimensionError("effective_rank_t: X and Z have different row counts");
  // rank{(I - P_X) Z} = rank(X : Z) - rank(X). Working on the concatenation keeps the
  // threshold tied to the scale of the inputs rather than to the rounding noise left
  // behind when a column of Z lies in col(X).
  Eigen::MatrixXd xz(X.rows(), X.cols() + Z.cols());
  xz << X, Z;
  const std::size_t joint = numeric_rank(xz, opts);
  const std::size_t base = numeric_rank(X, opts);
  return joint > base ? joint - base : 0;
}

double sse(const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  if (X.rows() != y.size()) throw DimensionError("sse: y and X have different row counts");
  const Eigen::VectorXd resid = y - X * X.colPivHouseholderQr().solve(y);
  return std::max(0.0, resid.squaredNorm());
}

Eigen::MatrixXd residual_basis(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  return Q.rightCols(n - p);
}

namespace {

void check_finite(const Eigen::MatrixXd& m, const std::string& what) {
  if (!m.allFinite()) throw DomainError(what + " contains non-finite entries");
}

}  // namespace

ModelSpec::ModelSpec(Eigen::MatrixXd X, Eigen::MatrixXd Z, std::vector<std::size_t> factor_sizes,
                     RandomEffects effects, PriorStructure prior, RankOptions rank)
    : X_(std::move(X)),
      Z_(std::move(Z)),
      factor_sizes_(std::move(factor_sizes)),
      effects_(std::move(effects)),
      prior_(std::move(prior)),
      rank_(rank) {
  if (X_.rows() != Z_.rows()) throw DimensionError("X has " + std::to_string(X_.rows()) + " rows but Z has " +
                                                   std::to_string(Z_.rows()));
  if (X_.cols() < 1) throw DimensionError("X needs at least one column");
  check_finite(X_, "X");
  check_finite(Z_, "Z");
  if (!(n() > p())) throw ConfigError("need n > p (n = " + std::to_string(n()) + ", p = " + std::to_string(p()) + ")");
  if (numeric_rank(X_, rank_) != p()) throw ConfigError("X does not have full column rank");
  if (factor_sizes_.empty()) throw ConfigError("need at least one random factor");
  std::size_t total = 0;
  for (std::size_t i = 0; i < factor_sizes_.size(); ++i) {
    if (factor_sizes_[i] < 1) throw ConfigError("factor " + std::to_string(i + 1) + " has size 0");
    offsets_.push_back(total);
    for (std::size_t k = 0; k < factor_sizes_[i]; ++k) owner_.push_back(i);
    total += factor_sizes_[i];
  }
  if (total != q()) {
    throw DimensionError("factor sizes sum to " + std::to_string(total) + " but Z has " + std::to_string(q()) +
                         " columns");
  }

  const std::size_t nr = r();
  std::visit(
      [nr](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, TpnEffects>) {
          if (!f.param) throw ConfigError("two-piece normal effects need a parameterisation");
          if (f.shape_priors.size() != nr) throw ConfigError("need one gamma prior per factor");
          for (const auto& pr : f.shape_priors) require_support_within(pr, f.param->gamma_lo, f.param->gamma_hi, "gamma");
        } else if constexpr (std::is_same_v<T, FsnEffects>) {
          if (!f.family) throw ConfigError("FSN effects need a family");
          if (f.shape_priors.size() != nr) throw ConfigError("need one lambda prior per factor");
          for (const auto& pr : f.shape_priors) {
            require_support_within(pr, f.family->lambda_lo, f.family->lambda_hi, "lambda");
          }
        } else if constexpr (std::is_same_v<T, SmnEffects>) {
          if (!f.mixing) throw ConfigError("SMN effects need a mixing distribution");
          if (!f.mixing->is_point_mass()) {
            require_support_within(f.delta_prior, f.mixing->delta_lo(), f.mixing->delta_hi(), "delta");
          }
        }
      },
      effects_);

  std::visit(
      [nr](const auto& pr) {
        using T = std::decay_t<decltype(pr)>;
        if constexpr (std::is_same_v<T, PowerExpPrior>) {
          if (pr.a.size() != nr + 1 || pr.b.size() != nr + 1) {
            throw ConfigError("power-exponential prior needs a_0..a_r and b_0..b_r (" + std::to_string(nr + 1) +
                              " entries each)");
          }
          for (std::size_t i = 0; i < pr.b.size(); ++i) {
            if (pr.b[i].exact < 0) throw DomainError("b_" + std::to_string(i) + " must be nonnegative");
          }
        } else {
          if (pr.s.size() != nr) throw ConfigError("half-Cauchy prior needs s_1..s_r");
          for (double s : pr.s) {
            if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("half-Cauchy scales must be positive");
          }
        }
      },
      prior_);

  t_ = effective_rank_t(X_, Z_, rank_);
  Eigen::MatrixXd xz(X_.rows(), X_.cols() + Z_.cols());
  xz << X_, Z_;
  rank_xz_ = numeric_rank(xz, rank_);
}

ModelSpec ModelSpec::with_prior(PriorStructure prior) const {
  return ModelSpec(X_, Z_, factor_sizes_, effects_, std::move(prior), rank_);
}

ModelSpec ModelSpec::with_effects(RandomEffects effects) const {
  return ModelSpec(X_, Z_, factor_sizes_, std::move(effects), prior_, rank_);
}

void ModelSpec::check_response(const Eigen::VectorXd& y) const {
  if (static_cast<std::size_t>(y.size()) != n()) {
    throw DimensionError("y has " + std::to_string(y.size()) + " entries but the design has " + std::to_string(n()) +
                         " rows");
  }
  if (!y.allFinite()) throw DomainError("y contains non-finite entries");
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> one_way_design(std::size_t groups, std::size_t per_group) {
  const Eigen::Index n = static_cast<Eigen::Index>(groups * per_group);
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(groups));
  for (Eigen::Index row = 0; row < n; ++row) Z(row, row / static_cast<Eigen::Index>(per_group)) = 1.0;
  return {X, Z};
}

}  // namespace flexlmm
