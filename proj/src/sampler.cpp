#include "flexlmm/sampler.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "flexlmm/diagnostics.hpp"
#include "flexlmm/errors.hpp"
#include "flexlmm/gaussian.hpp"

namespace flexlmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// sigma^2 ~ IG(shape, rate).
double inverse_gamma(Rng& rng, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw NumericalError("inverse-gamma full conditional is improper (shape " + std::to_string(shape) + ", rate " +
                         std::to_string(rate) + ")");
  }
  return rate / std::gamma_distribution<double>(shape, 1.0)(rng);
}

// Draw from N(0, 1) truncated to [alpha, inf).
double std_normal_tail(Rng& rng, double alpha) {
  if (alpha < 0.5) {
    while (true) {
      const double z = std_normal(rng);
      if (z >= alpha) return z;
    }
  }
  // Exponential proposal with the optimal rate.
  const double lambda = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
  while (true) {
    const double z = alpha - std::log(uniform01(rng)) / lambda;
    if (std::log(uniform01(rng)) <= -0.5 * (z - lambda) * (z - lambda)) return z;
  }
}

double log_prior_sigma(const PriorStructure& prior, std::size_t i, double sigma) {
  if (const auto* pe = std::get_if<PowerExpPrior>(&prior)) {
    const double a = pe->a[i].value;
    const double b = pe->b[i].value;
    return -(2.0 * a + 1.0) * std::log(sigma) - (b == 0.0 ? 0.0 : b / (sigma * sigma));
  }
  const auto& hc = std::get<HalfCauchyPrior>(prior);
  if (i == 0) return -(2.0 * hc.a0.value + 1.0) * std::log(sigma);
  const double s = hc.s[i - 1];
  return -std::log1p(sigma * sigma / (s * s));
}

double tpn_log_density_ab(double u, double sigma, double a, double b) {
  const double c = u < 0.0 ? b : a;
  return std::numbers::ln2 - std::log(sigma * (a + b)) + log_norm_pdf(u / (sigma * c));
}

struct RwBlock {
  double log_step = 0.0;
  std::size_t proposed = 0;
  std::size_t accepted = 0;
};

class Chain {
 public:
  Chain(const ModelSpec& spec, const Eigen::VectorXd& y, const SamplerOptions& opts)
      : spec_(spec), y_(y), opts_(opts), rng_(chain_rng(opts.seed, opts.chain_index)) {
    const Eigen::MatrixXd xtx = spec.X().transpose() * spec.X();
    xtx_llt_.compute(xtx);
    ls_ = xtx_llt_.solve(spec.X().transpose());
    znorm2_ = spec.Z().colwise().squaredNorm().transpose();
    // Directions (d_beta, d_u) with X d_beta + Z d_u = 0 leave the likelihood unchanged.
    Eigen::MatrixXd xz(spec.X().rows(), spec.X().cols() + spec.Z().cols());
    xz << spec.X(), spec.Z();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(xz, Eigen::ComputeFullV);
    null_ = svd.matrixV().rightCols(xz.cols() - static_cast<Eigen::Index>(spec.rank_xz()));
    r_ = spec.r();
    q_ = static_cast<Eigen::Index>(spec.q());
    std::visit([this](const auto& f) { configure(f); }, spec.effects());
    initialise();
  }

  ChainOutput run() {
    const std::size_t keep = opts_.iterations - opts_.burn_in;
    ChainOutput out;
    out.names = names_;
    out.seed = opts_.seed;
    out.chain_index = opts_.chain_index;
    out.draws.resize(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(names_.size()));
    for (std::size_t it = 0; it < opts_.iterations; ++it) {
      burning_ = it < opts_.burn_in;
      iteration_ = it;
      if (it == opts_.burn_in) {
        for (auto& [name, blk] : blocks_) {
          blk.proposed = 0;
          blk.accepted = 0;
        }
      }
      sweep();
      check_state();
      if (!burning_) record(out.draws, static_cast<Eigen::Index>(it - opts_.burn_in));
    }
    for (const auto& [name, blk] : blocks_) {
      out.acceptance_rates[name] = blk.proposed ? static_cast<double>(blk.accepted) / blk.proposed : 0.0;
      out.step_sizes[name] = std::exp(blk.log_step);
    }
    return out;
  }

 private:
  enum class Kind { Normal, Tpn, Fsn, Smn };

  void configure(const NormalEffects&) { kind_ = Kind::Normal; }
  void configure(const TpnEffects& f) {
    kind_ = Kind::Tpn;
    tpn_ = &f;
  }
  void configure(const FsnEffects& f) {
    kind_ = Kind::Fsn;
    fsn_ = &f;
  }
  void configure(const SmnEffects& f) {
    kind_ = Kind::Smn;
    smn_ = &f;
    if (!f.mixing->is_point_mass() && !f.mixing->log_smn_pdf(1.0, 1, 1.0, f.delta_prior.quantile(0.5))) {
      throw ConfigError("the sampler needs a closed-form SMN density for mixing '" + f.mixing->name() + "'");
    }
  }

  static double start_value(const ShapePrior& prior, std::optional<double> preferred) {
    if (prior.is_point_mass()) return prior.point();
    if (preferred && std::isfinite(prior.log_pdf(*preferred))) return *preferred;
    return prior.quantile(0.5);
  }

  void initialise() {
    const Eigen::Index p = static_cast<Eigen::Index>(spec_.p());
    state_.beta = ls_ * y_;
    state_.u = Eigen::VectorXd::Zero(q_);
    const double scale = std::sqrt(std::max(sse(y_, spec_.X()), 1e-12) / static_cast<double>(spec_.n() - spec_.p()));
    state_.sigma.assign(r_ + 1, scale);
    state_.shape.clear();
    if (kind_ == Kind::Tpn) {
      for (std::size_t i = 0; i < r_; ++i) state_.shape.push_back(start_value(tpn_->shape_priors[i], tpn_->param->symmetric_point));
    } else if (kind_ == Kind::Fsn) {
      for (std::size_t i = 0; i < r_; ++i) {
        const double zero = 0.0;
        state_.shape.push_back(start_value(fsn_->shape_priors[i], fsn_->family->contains(zero) ? std::optional(zero) : std::nullopt));
      }
    } else if (kind_ == Kind::Smn) {
      state_.delta = smn_->mixing->is_point_mass() ? 0.0 : start_value(smn_->delta_prior, std::nullopt);
    }
    if (opts_.initial) {
      const SamplerState& s = *opts_.initial;
      if (s.beta.size() != p || s.u.size() != q_ || s.sigma.size() != r_ + 1) {
        throw DimensionError("initial state does not match the model dimensions");
      }
      state_.beta = s.beta;
      state_.u = s.u;
      state_.sigma = s.sigma;
      if (!s.shape.empty()) state_.shape = s.shape;
      if (kind_ == Kind::Smn && s.delta > 0.0) state_.delta = s.delta;
    }
    if (opts_.fixed_scales) {
      if (opts_.fixed_scales->size() != r_ + 1) throw DimensionError("fixed_scales needs sigma_0..sigma_r");
      for (double s : *opts_.fixed_scales) {
        if (!(s > 0.0)) throw DomainError("fixed scales must be positive");
      }
      state_.sigma = *opts_.fixed_scales;
    }
    xi_.assign(r_, 1.0);
    resid_ = y_ - spec_.X() * state_.beta - spec_.Z() * state_.u;

    for (Eigen::Index j = 0; j < p; ++j) names_.push_back("beta_" + std::to_string(j + 1));
    for (Eigen::Index k = 0; k < q_; ++k) names_.push_back("u_" + std::to_string(k + 1));
    for (std::size_t i = 0; i <= r_; ++i) names_.push_back("sigma_" + std::to_string(i));
    if (kind_ == Kind::Tpn || kind_ == Kind::Fsn) {
      for (std::size_t i = 0; i < r_; ++i) names_.push_back((kind_ == Kind::Tpn ? "gamma_" : "lambda_") + std::to_string(i + 1));
    }
    if (kind_ == Kind::Smn) names_.push_back("delta");

    auto add_block = [this](const std::string& name) { blocks_[name].log_step = std::log(opts_.initial_step); };
    for (std::size_t i = 0; i < r_; ++i) {
      const std::string idx = std::to_string(i + 1);
      if (kind_ == Kind::Fsn || kind_ == Kind::Smn) {
        add_block("u_factor_" + idx);
        if (!opts_.fixed_scales) add_block("sigma_" + idx);
      }
      if (kind_ == Kind::Tpn && !tpn_->shape_priors[i].is_point_mass()) add_block("gamma_" + idx);
      if (kind_ == Kind::Fsn && !fsn_->shape_priors[i].is_point_mass()) add_block("lambda_" + idx);
    }
    if (kind_ == Kind::Smn && !smn_->mixing->is_point_mass() && !smn_->delta_prior.is_point_mass()) add_block("delta");
    for (Eigen::Index j = 0; j < null_.cols(); ++j) add_block("null_" + std::to_string(j + 1));
    // Random-walk steps on u start at the data scale.
    for (auto& [name, blk] : blocks_) {
      if (name.rfind("u_factor_", 0) == 0 || name.rfind("null_", 0) == 0) blk.log_step = std::log(opts_.initial_step * scale);
    }
  }

  // Metropolis accept with Robbins-Monro adaptation of the block's step during burn-in.
  bool accept(RwBlock& blk, double log_ratio) {
    const bool ok = std::isfinite(log_ratio) && std::log(uniform01(rng_)) < log_ratio;
    ++blk.proposed;
    if (ok) ++blk.accepted;
    if (burning_) {
      const double gain = std::pow(static_cast<double>(iteration_) + 1.0, -0.6);
      blk.log_step += gain * ((ok ? 1.0 : 0.0) - opts_.target_acceptance);
    }
    return ok;
  }

  void sweep() {
    draw_beta();
    switch (kind_) {
      case Kind::Normal:
      case Kind::Tpn:
        draw_u_exact();
        break;
      case Kind::Fsn:
      case Kind::Smn:
        draw_u_metropolis();
        break;
    }
    draw_null_directions();
    if (!opts_.fixed_scales) {
      draw_sigma0();
      if (kind_ == Kind::Normal || kind_ == Kind::Tpn) {
        draw_sigma_exact();
      } else {
        draw_sigma_metropolis();
      }
    }
    if (kind_ == Kind::Tpn) draw_gamma();
    if (kind_ == Kind::Fsn) draw_lambda();
    if (kind_ == Kind::Smn) draw_delta();
  }

  void draw_beta() {
    // beta | rest ~ N((X'X)^-1 X'(y - Z u), sigma_0^2 (X'X)^-1).
    const Eigen::VectorXd target = resid_ + spec_.X() * state_.beta;
    const Eigen::VectorXd mean = ls_ * target;
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = std_normal(rng_);
    const Eigen::VectorXd noise = xtx_llt_.matrixU().solve(z);
    const Eigen::VectorXd beta = mean + state_.sigma[0] * noise;
    resid_ += spec_.X() * (state_.beta - beta);
    state_.beta = beta;
  }

  std::pair<double, double> tpn_ab(std::size_t i) const {
    if (kind_ != Kind::Tpn) return {1.0, 1.0};
    const auto& param = *tpn_->param;
    return {param.a(state_.shape[i]), param.b(state_.shape[i])};
  }

  void draw_u_exact() {
    const double s0sq = state_.sigma[0] * state_.sigma[0];
    for (Eigen::Index k = 0; k < q_; ++k) {
      const std::size_t i = spec_.factor_of(static_cast<std::size_t>(k));
      const double sigma = state_.sigma[i + 1];
      const auto [a, b] = tpn_ab(i);
      const double old = state_.u(k);
      // Likelihood in u_k: exp(-prec_l u^2 / 2 + lin u).
      const double prec_l = znorm2_(k) / s0sq;
      const double lin = spec_.Z().col(k).dot(resid_ + spec_.Z().col(k) * old) / s0sq;
      double value = 0.0;
      if (kind_ == Kind::Normal || a == b) {
        const double prec = prec_l + 1.0 / (sigma * sigma * a * a);
        value = lin / prec + std_normal(rng_) / std::sqrt(prec);
      } else {
        const double prec_pos = prec_l + 1.0 / (sigma * sigma * a * a);
        const double prec_neg = prec_l + 1.0 / (sigma * sigma * b * b);
        const double lw_pos =
            lin * lin / (2.0 * prec_pos) - 0.5 * std::log(prec_pos) + log_norm_cdf(lin / std::sqrt(prec_pos));
        const double lw_neg =
            lin * lin / (2.0 * prec_neg) - 0.5 * std::log(prec_neg) + log_norm_cdf(-lin / std::sqrt(prec_neg));
        const double p_pos = 1.0 / (1.0 + std::exp(lw_neg - lw_pos));
        const bool positive = uniform01(rng_) < p_pos;
        const double prec = positive ? prec_pos : prec_neg;
        value = truncated_normal_half(rng_, lin / prec, 1.0 / std::sqrt(prec), positive);
      }
      state_.u(k) = value;
      resid_ -= spec_.Z().col(k) * (value - old);
    }
  }

  double log_effect_density(std::size_t i, const Eigen::VectorXd& u, double sigma, double shape, double delta) const {
    const std::size_t off = spec_.factor_offset(i);
    const std::size_t qi = spec_.factor_sizes()[i];
    if (kind_ == Kind::Normal) {
      double s = 0.0;
      for (std::size_t k = off; k < off + qi; ++k) s += log_norm_pdf(u(static_cast<Eigen::Index>(k)) / sigma) - std::log(sigma);
      return s;
    }
    if (kind_ == Kind::Fsn) {
      double s = 0.0;
      for (std::size_t k = off; k < off + qi; ++k) s += fsn_log_pdf(u(static_cast<Eigen::Index>(k)), 0.0, sigma, shape, *fsn_->family);
      return s;
    }
    if (kind_ == Kind::Smn) {
      const double r2 = u.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(qi)).squaredNorm();
      return *smn_->mixing->log_smn_pdf(r2, static_cast<int>(qi), sigma, delta);
    }
    const auto& param = *tpn_->param;
    const double a = param.a(shape);
    const double b = param.b(shape);
    double s = 0.0;
    for (std::size_t k = off; k < off + qi; ++k) s += tpn_log_density_ab(u(static_cast<Eigen::Index>(k)), sigma, a, b);
    return s;
  }

  double shape_of(std::size_t i) const { return state_.shape.empty() ? 0.0 : state_.shape[i]; }

  void draw_u_metropolis() {
    const double s0sq = state_.sigma[0] * state_.sigma[0];
    for (Eigen::Index k = 0; k < q_; ++k) {
      const std::size_t i = spec_.factor_of(static_cast<std::size_t>(k));
      RwBlock& blk = blocks_["u_factor_" + std::to_string(i + 1)];
      const double old = state_.u(k);
      const double step = std::exp(blk.log_step) * std_normal(rng_);
      const double lik = -(step * step * znorm2_(k) - 2.0 * step * spec_.Z().col(k).dot(resid_)) / (2.0 * s0sq);
      const double before = log_effect_density(i, state_.u, state_.sigma[i + 1], shape_of(i), state_.delta);
      state_.u(k) = old + step;
      const double after = log_effect_density(i, state_.u, state_.sigma[i + 1], shape_of(i), state_.delta);
      if (accept(blk, lik + after - before)) {
        resid_ -= spec_.Z().col(k) * step;
      } else {
        state_.u(k) = old;
      }
    }
  }

  // Random walk along the null space of (X : Z); only the random-effects density changes.
  void draw_null_directions() {
    const Eigen::Index p = state_.beta.size();
    for (Eigen::Index j = 0; j < null_.cols(); ++j) {
      RwBlock& blk = blocks_["null_" + std::to_string(j + 1)];
      const double t = std::exp(blk.log_step) * std_normal(rng_);
      const Eigen::VectorXd db = t * null_.col(j).head(p);
      const Eigen::VectorXd du = t * null_.col(j).tail(q_);
      const Eigen::VectorXd u_new = state_.u + du;
      double log_ratio = 0.0;
      for (std::size_t i = 0; i < r_; ++i) {
        log_ratio += log_effect_density(i, u_new, state_.sigma[i + 1], shape_of(i), state_.delta) -
                     log_effect_density(i, state_.u, state_.sigma[i + 1], shape_of(i), state_.delta);
      }
      if (accept(blk, log_ratio)) {
        state_.beta += db;
        state_.u = u_new;
        resid_ -= spec_.X() * db + spec_.Z() * du;
      }
    }
  }

  void draw_sigma0() {
    double a0 = 0.0;
    double b0 = 0.0;
    if (const auto* pe = std::get_if<PowerExpPrior>(&spec_.prior())) {
      a0 = pe->a[0].value;
      b0 = pe->b[0].value;
    } else {
      a0 = std::get<HalfCauchyPrior>(spec_.prior()).a0.value;
    }
    const double rss = resid_.squaredNorm();
    state_.sigma[0] = std::sqrt(inverse_gamma(rng_, 0.5 * static_cast<double>(spec_.n()) + a0, b0 + 0.5 * rss));
  }

  void draw_sigma_exact() {
    for (std::size_t i = 0; i < r_; ++i) {
      const auto [a, b] = tpn_ab(i);
      const std::size_t off = spec_.factor_offset(i);
      const std::size_t qi = spec_.factor_sizes()[i];
      double s = 0.0;
      for (std::size_t k = off; k < off + qi; ++k) {
        const double u = state_.u(static_cast<Eigen::Index>(k));
        const double c = u < 0.0 ? b : a;
        s += u * u / (2.0 * c * c);
      }
      const double q = static_cast<double>(qi);
      if (const auto* pe = std::get_if<PowerExpPrior>(&spec_.prior())) {
        const double v = inverse_gamma(rng_, 0.5 * q + pe->a[i + 1].value, pe->b[i + 1].value + s);
        state_.sigma[i + 1] = std::sqrt(v);
      } else {
        // sigma^2 | xi ~ IG(1/2, 1/xi) and xi ~ IG(1/2, 1/s^2) make sigma half-Cauchy(0, s).
        const double scale = std::get<HalfCauchyPrior>(spec_.prior()).s[i];
        const double v = inverse_gamma(rng_, 0.5 * (q + 1.0), 1.0 / xi_[i] + s);
        state_.sigma[i + 1] = std::sqrt(v);
        xi_[i] = inverse_gamma(rng_, 1.0, 1.0 / (scale * scale) + 1.0 / v);
      }
    }
  }

  void draw_sigma_metropolis() {
    for (std::size_t i = 0; i < r_; ++i) {
      RwBlock& blk = blocks_["sigma_" + std::to_string(i + 1)];
      const double old = state_.sigma[i + 1];
      const double prop = old * std::exp(std::exp(blk.log_step) * std_normal(rng_));
      auto target = [&](double sigma) {
        return log_effect_density(i, state_.u, sigma, shape_of(i), state_.delta) +
               log_prior_sigma(spec_.prior(), i + 1, sigma) + std::log(sigma);
      };
      if (accept(blk, target(prop) - target(old))) state_.sigma[i + 1] = prop;
    }
  }

  void draw_gamma() {
    const auto& param = *tpn_->param;
    for (std::size_t i = 0; i < r_; ++i) {
      const ShapePrior& prior = tpn_->shape_priors[i];
      if (prior.is_point_mass()) continue;
      RwBlock& blk = blocks_["gamma_" + std::to_string(i + 1)];
      const double old = state_.shape[i];
      const double z_old = param.to_z(old);
      const double z_new = z_old + std::exp(blk.log_step) * std_normal(rng_);
      const double prop = param.from_z(z_new);
      if (!param.contains(prop)) {
        accept(blk, kNegInf);
        continue;
      }
      auto target = [&](double gamma, double z) {
        const double lp = prior.log_pdf(gamma);
        if (!std::isfinite(lp)) return kNegInf;
        return log_effect_density(i, state_.u, state_.sigma[i + 1], gamma, 0.0) + lp + param.log_jacobian(z);
      };
      if (accept(blk, target(prop, z_new) - target(old, z_old))) state_.shape[i] = prop;
    }
  }

  void draw_lambda() {
    for (std::size_t i = 0; i < r_; ++i) {
      const ShapePrior& prior = fsn_->shape_priors[i];
      if (prior.is_point_mass()) continue;
      RwBlock& blk = blocks_["lambda_" + std::to_string(i + 1)];
      const double old = state_.shape[i];
      const double prop = old + std::exp(blk.log_step) * std_normal(rng_);
      if (!fsn_->family->contains(prop)) {
        accept(blk, kNegInf);
        continue;
      }
      auto target = [&](double lambda) {
        const double lp = prior.log_pdf(lambda);
        if (!std::isfinite(lp)) return kNegInf;
        return log_effect_density(i, state_.u, state_.sigma[i + 1], lambda, 0.0) + lp;
      };
      if (accept(blk, target(prop) - target(old))) state_.shape[i] = prop;
    }
  }

  void draw_delta() {
    if (smn_->mixing->is_point_mass() || smn_->delta_prior.is_point_mass()) {
      if (!smn_->mixing->is_point_mass()) state_.delta = smn_->delta_prior.point();
      return;
    }
    RwBlock& blk = blocks_["delta"];
    const double old = state_.delta;
    const double prop = old * std::exp(std::exp(blk.log_step) * std_normal(rng_));
    auto target = [&](double delta) {
      if (!(delta > smn_->mixing->delta_lo() && delta < smn_->mixing->delta_hi())) return kNegInf;
      const double lp = smn_->delta_prior.log_pdf(delta);
      if (!std::isfinite(lp)) return kNegInf;
      double s = lp + std::log(delta);
      for (std::size_t i = 0; i < r_; ++i) s += log_effect_density(i, state_.u, state_.sigma[i + 1], 0.0, delta);
      return s;
    };
    if (accept(blk, target(prop) - target(old))) state_.delta = prop;
  }

  void check_state() const {
    bool ok = state_.beta.allFinite() && state_.u.allFinite() && resid_.allFinite();
    for (double s : state_.sigma) ok = ok && std::isfinite(s) && s > 0.0;
    for (double s : state_.shape) ok = ok && std::isfinite(s);
    if (ok) return;
    std::ostringstream os;
    os.precision(17);
    os << "non-finite state at iteration " << iteration_ << ": beta = [" << state_.beta.transpose() << "], u = ["
       << state_.u.transpose() << "], sigma = [";
    for (double s : state_.sigma) os << s << ' ';
    os << "], shape = [";
    for (double s : state_.shape) os << s << ' ';
    os << "]";
    throw NumericalError(os.str());
  }

  void record(Eigen::MatrixXd& draws, Eigen::Index i) const {
    auto row = draws.row(i);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < state_.beta.size(); ++j) row(c++) = state_.beta(j);
    for (Eigen::Index k = 0; k < q_; ++k) row(c++) = state_.u(k);
    for (double s : state_.sigma) row(c++) = s;
    if (kind_ == Kind::Tpn || kind_ == Kind::Fsn) {
      for (double s : state_.shape) row(c++) = s;
    }
    if (kind_ == Kind::Smn) row(c++) = state_.delta;
  }

  const ModelSpec& spec_;
  const Eigen::VectorXd& y_;
  const SamplerOptions& opts_;
  Rng rng_;
  Eigen::LLT<Eigen::MatrixXd> xtx_llt_;
  Eigen::MatrixXd ls_;
  Eigen::VectorXd znorm2_;
  Eigen::MatrixXd null_;
  std::size_t r_ = 0;
  Eigen::Index q_ = 0;
  Kind kind_ = Kind::Normal;
  const TpnEffects* tpn_ = nullptr;
  const FsnEffects* fsn_ = nullptr;
  const SmnEffects* smn_ = nullptr;
  SamplerState state_;
  std::vector<double> xi_;
  Eigen::VectorXd resid_;
  std::vector<std::string> names_;
  std::map<std::string, RwBlock> blocks_;
  bool burning_ = true;
  std::size_t iteration_ = 0;
};

}  // namespace

Rng chain_rng(std::uint64_t seed, std::size_t chain_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain_index & 0xffffffffu),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(chain_index) >> 32)};
  return Rng(seq);
}

double truncated_normal_half(Rng& rng, double mu, double sd, bool positive) {
  if (!(sd > 0.0)) throw DomainError("truncated normal: sd must be positive");
  // X >= 0 with X = mu + sd Z  <=>  Z >= -mu / sd; the negative side is mirrored.
  const double alpha = positive ? -mu / sd : mu / sd;
  const double z = std_normal_tail(rng, alpha);
  return positive ? mu + sd * z : mu - sd * z;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> conjugate_beta_posterior(const ModelSpec& spec, const Eigen::VectorXd& y,
                                                                     const std::vector<double>& sigmas) {
  spec.check_response(y);
  if (sigmas.size() != spec.r() + 1) throw DimensionError("need sigma_0..sigma_r");
  Eigen::VectorXd dz(static_cast<Eigen::Index>(spec.q()));
  for (std::size_t k = 0; k < spec.q(); ++k) dz(static_cast<Eigen::Index>(k)) = sigmas[spec.factor_of(k) + 1];
  const Eigen::MatrixXd ZD = spec.Z() * dz.asDiagonal();
  Eigen::MatrixXd V = ZD * ZD.transpose();
  V.diagonal().array() += sigmas[0] * sigmas[0];
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::MatrixXd vix = llt.solve(spec.X());
  const Eigen::MatrixXd cov = (spec.X().transpose() * vix).inverse();
  const Eigen::VectorXd mean = cov * (vix.transpose() * y);
  return {mean, cov};
}

Eigen::VectorXd ChainOutput::column(const std::string& name) const { return draws.col(static_cast<Eigen::Index>(column_index(name))); }

std::size_t ChainOutput::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return j;
  }
  throw ConfigError("no column named '" + name + "'");
}

ChainOutput mwg_sample(const ModelSpec& spec, const Eigen::VectorXd& y, const SamplerOptions& options) {
  spec.check_response(y);
  if (options.iterations <= options.burn_in) throw ConfigError("iterations must exceed burn_in");
  if (!(options.initial_step > 0.0)) throw ConfigError("initial_step must be positive");
  if (!(options.target_acceptance > 0.0 && options.target_acceptance < 1.0)) {
    throw ConfigError("target_acceptance must lie in (0, 1)");
  }

  std::optional<Verdict> gate;
  std::vector<std::string> warnings;
  if (!options.fixed_scales) {
    try {
      const ProprietyVerdict v = check_propriety(spec, y);
      gate = v.overall;
      if (v.overall != Verdict::Proper) {
        if (!options.override_propriety) {
          throw ConfigError("refusing to sample: the posterior is " + to_string(v.overall) +
                            " according to the propriety checker (set override_propriety to sample anyway)");
        }
        warnings.push_back("sampling a posterior classified " + to_string(v.overall));
      }
    } catch (const ConfigError& e) {
      if (gate && *gate != Verdict::Proper && !options.override_propriety) throw;
      if (!gate && !options.override_propriety) {
        throw ConfigError(std::string("refusing to sample: no propriety result (") + e.what() +
                          "); set override_propriety to sample anyway");
      }
      if (!gate) warnings.push_back(std::string("no propriety result: ") + e.what());
    }
  }

  Chain chain(spec, y, options);
  ChainOutput out = chain.run();
  out.gate_verdict = gate;
  out.warnings = std::move(warnings);
  const Eigen::Index rows = out.draws.rows();
  for (std::size_t j = 0; j < out.names.size(); ++j) {
    const Eigen::VectorXd col = out.draws.col(static_cast<Eigen::Index>(j));
    const std::span<const double> s(col.data(), static_cast<std::size_t>(rows));
    out.ess[out.names[j]] = effective_sample_size(s);
    out.split_rhat[out.names[j]] = split_rhat({s});
  }
  for (const auto& [name, rate] : out.acceptance_rates) {
    if (rate < 0.1 || rate > 0.6) {
      out.warnings.push_back("acceptance rate of block " + name + " is " + std::to_string(rate));
    }
  }
  return out;
}

std::vector<ChainOutput> sample_chains(const ModelSpec& spec, const Eigen::VectorXd& y, const SamplerOptions& options,
                                       std::size_t chains, unsigned threads) {
  if (chains == 0) throw ConfigError("need at least one chain");
  std::vector<ChainOutput> out(chains);
  std::vector<SamplerOptions> opts(chains, options);
  for (std::size_t c = 0; c < chains; ++c) opts[c].chain_index = c;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(chains));
  if (threads <= 1) {
    for (std::size_t c = 0; c < chains; ++c) out[c] = mwg_sample(spec, y, opts[c]);
    return out;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex m;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chains; c += threads) out[c] = mwg_sample(spec, y, opts[c]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

DiagnosticsReport diagnostics(const std::vector<ChainOutput>& chains) {
  if (chains.empty()) throw ConfigError("diagnostics need at least one chain");
  DiagnosticsReport rep;
  rep.chains = chains.size();
  rep.draws_per_chain = static_cast<std::size_t>(chains.front().draws.rows());
  for (const auto& c : chains) {
    if (c.names != chains.front().names) throw ConfigError("chains have different parameters");
    if (static_cast<std::size_t>(c.draws.rows()) != rep.draws_per_chain) {
      throw DimensionError("chains have different lengths");
    }
  }
  if (chains.size() == 1) rep.warnings.push_back("single chain: scale reduction uses the two halves of one chain");
  for (std::size_t a = 0; a < chains.size(); ++a) {
    for (std::size_t b = a + 1; b < chains.size(); ++b) {
      if (chains[a].seed == chains[b].seed && chains[a].chain_index == chains[b].chain_index) {
        rep.warnings.push_back("chains " + std::to_string(a) + " and " + std::to_string(b) + " share a random stream");
      }
    }
  }
  const auto& names = chains.front().names;
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<Eigen::VectorXd> cols;
    std::vector<std::span<const double>> spans;
    for (const auto& c : chains) cols.push_back(c.draws.col(static_cast<Eigen::Index>(j)));
    for (const auto& col : cols) spans.emplace_back(col.data(), static_cast<std::size_t>(col.size()));
    ParameterDiagnostics d;
    double sum = 0.0;
    double sumsq = 0.0;
    double count = 0.0;
    for (const auto& s : spans) {
      d.ess += effective_sample_size(s);
      for (double v : s) {
        sum += v;
        sumsq += v * v;
        count += 1.0;
      }
    }
    d.mean = sum / count;
    d.sd = std::sqrt(std::max(0.0, (sumsq - count * d.mean * d.mean) / std::max(1.0, count - 1.0)));
    d.mcse = d.sd / std::sqrt(d.ess);
    d.split_rhat = split_rhat(spans);
    d.rhat_undefined = std::isnan(d.split_rhat);
    if (d.rhat_undefined) rep.warnings.push_back("scale reduction undefined for " + names[j] + " (no within-chain variation)");
    rep.parameters[names[j]] = d;
  }
  for (const auto& c : chains) {
    for (const auto& [name, rate] : c.acceptance_rates) rep.acceptance_rates[name] += rate / static_cast<double>(chains.size());
  }
  return rep;
}

}  // namespace flexlmm
