#include "flexlmm/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "flexlmm/errors.hpp"
#include "flexlmm/gaussian.hpp"
#include "flexlmm/propriety.hpp"
#include "flexlmm/quadrature.hpp"

namespace flexlmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr std::size_t kChannels = 4;  // value, lower, upper (H form), upper (max form)

using Channels = std::array<double, kChannels>;

double log_add(double x, double y) {
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  const double m = std::max(x, y);
  return m + std::log1p(std::exp(-std::abs(x - y)));
}

// Streaming log-sum-exp; the result depends only on the order of the additions.
struct LogSum {
  double max = kNegInf;
  double sum = 0.0;

  void add(double x) {
    if (x == kNegInf || std::isnan(x)) return;
    if (x <= max) {
      sum += std::exp(x - max);
    } else {
      sum = sum * std::exp(max - x) + 1.0;
      max = x;
    }
  }
  double value() const { return max == kNegInf ? kNegInf : max + std::log(sum); }
};

struct QNode {
  double value;
  double log_weight;
};

std::vector<QNode> quantile_nodes(const std::function<double(double)>& quantile, const std::vector<double>& breaks,
                                  int per_panel) {
  std::vector<QNode> out;
  const auto& rule = quad::gauss_legendre(per_panel);
  for (std::size_t j = 0; j + 1 < breaks.size(); ++j) {
    for (const auto& [w, wt] : quad::mapped_nodes(rule, breaks[j], breaks[j + 1])) {
      out.push_back({quantile(w), std::log(wt)});
    }
  }
  return out;
}

std::vector<QNode> shape_nodes(const ShapePrior& prior, const OracleGrid& grid) {
  if (prior.is_point_mass()) return {{prior.point(), 0.0}};
  return quantile_nodes([&](double w) { return prior.quantile(w); }, grid.shape_breaks, grid.shape_nodes);
}

// Integrates the shape/mixing parameters of one grid point. Each combination carries
// two numbers per factor: (a, b) for two-piece normal, (lambda, -) for FSN, (tau, -) for SMN.
struct Combo {
  double log_weight = 0.0;
  std::vector<double> p1;
  std::vector<double> p2;
};

std::vector<Combo> tensor(const std::vector<std::vector<Combo>>& per_factor) {
  std::vector<Combo> out{Combo{}};
  for (const auto& options : per_factor) {
    std::vector<Combo> next;
    next.reserve(out.size() * options.size());
    for (const auto& base : out) {
      for (const auto& o : options) {
        Combo c = base;
        c.log_weight += o.log_weight;
        c.p1.push_back(o.p1.at(0));
        c.p2.push_back(o.p2.at(0));
        next.push_back(std::move(c));
      }
    }
    out = std::move(next);
  }
  return out;
}

struct Posterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Everything about (X, Z, y) that does not depend on the parameters.
struct Prepared {
  const ModelSpec* spec = nullptr;
  Eigen::VectorXd yt;  // N' y
  Eigen::MatrixXd Wt;  // N' Z
  double yt_norm2 = 0.0;
  double log_det_xtx = 0.0;
  Eigen::Index n_res = 0;
  double center = 0.0;

  // log of the flat-beta marginal with u ~ N(0, diag(d^2)), optionally with the
  // posterior of v = u / d.
  double log_gauss(double sigma0, const Eigen::VectorXd& d, Posterior* post) const {
    const Eigen::Index q = d.size();
    const Eigen::MatrixXd B = Wt * (d / sigma0).asDiagonal();
    const unsigned opts = post ? (Eigen::ComputeThinU | Eigen::ComputeFullV) : Eigen::ComputeThinU;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, opts);
    const Eigen::VectorXd& s = svd.singularValues();
    const Eigen::MatrixXd& U = svd.matrixU();
    const Eigen::VectorXd c = U.transpose() * yt;
    const double resid = (yt - U * c).squaredNorm();
    double quad = resid;
    double log_det = 0.0;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      const double s2 = s(k) * s(k);
      quad += c(k) * c(k) / (1.0 + s2);
      log_det += std::log1p(s2);
    }
    const double nr = static_cast<double>(n_res);
    const double value = -0.5 * nr * kLog2Pi - 0.5 * log_det_xtx - nr * std::log(sigma0) - 0.5 * log_det -
                         quad / (2.0 * sigma0 * sigma0);
    if (post) {
      const Eigen::MatrixXd& V = svd.matrixV();
      Eigen::VectorXd shrink = Eigen::VectorXd::Ones(q);
      Eigen::VectorXd coef = Eigen::VectorXd::Zero(q);
      for (Eigen::Index k = 0; k < s.size(); ++k) {
        shrink(k) = 1.0 / (1.0 + s(k) * s(k));
        coef(k) = s(k) / (1.0 + s(k) * s(k)) * c(k) / sigma0;
      }
      post->mean = V * coef;
      post->cov = V * shrink.asDiagonal() * V.transpose();
      post->cov = 0.5 * (post->cov + post->cov.transpose());
    }
    return value;
  }
};

Prepared prepare(const ModelSpec& spec, const Eigen::VectorXd& y) {
  spec.check_response(y);
  Prepared P;
  P.spec = &spec;
  const Eigen::MatrixXd N = residual_basis(spec.X());
  P.yt = N.transpose() * y;
  P.Wt = N.transpose() * spec.Z();
  P.yt_norm2 = P.yt.squaredNorm();
  P.n_res = N.cols();
  const Eigen::MatrixXd xtx = spec.X().transpose() * spec.X();
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success) throw NumericalError("X'X is not positive definite");
  P.log_det_xtx = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, y.squaredNorm());
  const double e = sse(y, spec.X());
  if (!(e > floor)) throw DomainError("the integrator needs a response with SSE > 0 (y lies in col(X))");
  P.center = std::sqrt(e / static_cast<double>(spec.n() - spec.p()));
  return P;
}

void check_desk_limits(const ModelSpec& spec, const OracleGrid& grid) {
  if (!grid.enforce_desk_limits) return;
  if (spec.n() > 6 || spec.p() > 2 || spec.q() > 3 || spec.r() > 2) {
    throw ConfigError("brute-force integration is limited to n <= 6, p <= 2, q <= 3, r <= 2 (got n = " +
                      std::to_string(spec.n()) + ", p = " + std::to_string(spec.p()) + ", q = " +
                      std::to_string(spec.q()) + ", r = " + std::to_string(spec.r()) + ")");
  }
}

// The integrand over the scales, with shape and mixing parameters already integrated out.
class Integrand {
 public:
  Integrand(const Prepared& P, const OracleGrid& grid, bool with_bounds) : P_(P), grid_(grid), bounds_(with_bounds) {
    const ModelSpec& spec = *P.spec;
    q_ = static_cast<Eigen::Index>(spec.q());
    owner_.resize(spec.q());
    for (std::size_t k = 0; k < spec.q(); ++k) owner_[k] = spec.factor_of(k);
    std::visit([this, &spec](const auto& f) { setup(spec, f); }, spec.effects());
  }

  Channels operator()(std::span<const double> sigma) const {
    Channels out;
    out.fill(kNegInf);
    switch (kind_) {
      case Kind::Normal: {
        Eigen::VectorXd d(q_);
        for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1];
        out.fill(P_.log_gauss(sigma[0], d, nullptr));
        return out;
      }
      case Kind::Tpn:
        for (const auto& c : combos_) accumulate(out, c.log_weight, tpn_terms(sigma, c));
        return out;
      case Kind::Fsn:
        for (const auto& c : combos_) accumulate(out, c.log_weight, fsn_terms(sigma, c));
        return out;
      case Kind::Smn:
        for (const auto& c : combos_) {
          Eigen::VectorXd d(q_);
          for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1] / std::sqrt(c.p1[owner_[k]]);
          Channels t;
          t.fill(P_.log_gauss(sigma[0], d, nullptr));
          accumulate(out, c.log_weight, t);
        }
        return out;
    }
    return out;
  }

  std::string describe() const { return describe_; }

 private:
  enum class Kind { Normal, Tpn, Fsn, Smn };

  static void accumulate(Channels& out, double log_weight, const Channels& terms) {
    for (std::size_t j = 0; j < kChannels; ++j) out[j] = log_add(out[j], log_weight + terms[j]);
  }

  void setup(const ModelSpec&, const NormalEffects&) {
    kind_ = Kind::Normal;
    describe_ = "normal effects";
  }

  void setup(const ModelSpec& spec, const TpnEffects& f) {
    kind_ = Kind::Tpn;
    std::vector<std::vector<Combo>> per;
    for (std::size_t i = 0; i < spec.r(); ++i) {
      std::vector<Combo> opts;
      for (const auto& node : shape_nodes(f.shape_priors[i], grid_)) {
        opts.push_back({node.log_weight, {f.param->a(node.value)}, {f.param->b(node.value)}});
      }
      per.push_back(std::move(opts));
    }
    combos_ = tensor(per);
    describe_ = "two-piece normal, " + std::to_string(combos_.size()) + " gamma nodes";
  }

  void setup(const ModelSpec& spec, const FsnEffects& f) {
    kind_ = Kind::Fsn;
    if (f.family->name == "uniform") {
      skew_normal_ = false;
    } else if (f.family->name == "skew_normal") {
      skew_normal_ = true;
    } else {
      throw ConfigError("the integrator handles the uniform and skew_normal FSN families only");
    }
    sup_ = f.family->sup_bound;
    inf_ = f.family->inf_bound;
    std::vector<std::vector<Combo>> per;
    for (std::size_t i = 0; i < spec.r(); ++i) {
      std::vector<Combo> opts;
      if (!skew_normal_) {
        opts.push_back({0.0, {0.0}, {0.0}});
      } else {
        for (const auto& node : shape_nodes(f.shape_priors[i], grid_)) opts.push_back({node.log_weight, {node.value}, {0.0}});
      }
      per.push_back(std::move(opts));
    }
    combos_ = tensor(per);
    describe_ = "FSN " + f.family->name + ", " + std::to_string(combos_.size()) + " lambda nodes";
  }

  void setup(const ModelSpec& spec, const SmnEffects& f) {
    kind_ = Kind::Smn;
    std::vector<QNode> deltas;
    if (f.mixing->is_point_mass()) {
      deltas.push_back({0.0, 0.0});
    } else {
      deltas = shape_nodes(f.delta_prior, grid_);
    }
    for (const auto& dn : deltas) {
      std::vector<std::vector<Combo>> per;
      std::vector<Combo> taus;
      if (f.mixing->is_point_mass()) {
        taus.push_back({0.0, {1.0}, {0.0}});
      } else {
        const auto mixing = f.mixing;
        const double delta = dn.value;
        for (const auto& tn : quantile_nodes([&](double w) { return mixing->quantile(w, delta); }, grid_.mixing_breaks,
                                             grid_.mixing_nodes)) {
          taus.push_back({tn.log_weight, {tn.value}, {0.0}});
        }
      }
      for (std::size_t i = 0; i < spec.r(); ++i) per.push_back(taus);
      for (auto c : tensor(per)) {
        c.log_weight += dn.log_weight;
        combos_.push_back(std::move(c));
      }
    }
    describe_ = "SMN " + f.mixing->name() + ", " + std::to_string(combos_.size()) + " (delta, tau) nodes";
  }

  Channels tpn_terms(std::span<const double> sigma, const Combo& c) const {
    Channels t;
    t.fill(kNegInf);
    const std::size_t r = c.p1.size();
    bool symmetric = true;
    for (std::size_t i = 0; i < r; ++i) symmetric = symmetric && c.p1[i] == c.p2[i];
    Eigen::VectorXd d(q_);
    if (symmetric) {
      // Both pieces coincide: the density is N(0, (sigma a)^2) and 2a / H = 1.
      for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1] * c.p1[owner_[k]];
      t[0] = P_.log_gauss(sigma[0], d, nullptr);
    } else {
      // Split u into orthants: on each one every coordinate is a half-normal piece.
      Posterior post;
      std::array<bool, 32> positive{};
      if (q_ > 20) throw ConfigError("too many random effects for orthant enumeration");
      const unsigned patterns = 1u << q_;
      for (unsigned m = 0; m < patterns; ++m) {
        double lw = 0.0;
        for (Eigen::Index k = 0; k < q_; ++k) {
          const std::size_t i = owner_[k];
          positive[k] = (m >> k) & 1u;
          const double scale = positive[k] ? c.p1[i] : c.p2[i];
          d(k) = sigma[i + 1] * scale;
          lw += std::log(2.0 * scale / (c.p1[i] + c.p2[i]));
        }
        const double lg = P_.log_gauss(sigma[0], d, &post);
        const double prob = orthant_probability(
            post.mean, post.cov, std::span<const bool>(positive.data(), static_cast<std::size_t>(q_)), grid_.orthant_tol);
        if (prob > 0.0) t[0] = log_add(t[0], lw + lg + std::log(prob));
      }
    }
    if (!bounds_) return t;
    double lw_lower = 0.0;
    double lw_max = 0.0;
    for (Eigen::Index k = 0; k < q_; ++k) {
      const std::size_t i = owner_[k];
      const double H = c.p1[i] + c.p2[i];
      lw_lower += std::log(2.0 * std::min(c.p1[i], c.p2[i]) / H);
      lw_max += std::log(2.0 * std::max(c.p1[i], c.p2[i]) / H);
    }
    for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1] * std::min(c.p1[owner_[k]], c.p2[owner_[k]]);
    t[1] = lw_lower + P_.log_gauss(sigma[0], d, nullptr);
    for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1] * (c.p1[owner_[k]] + c.p2[owner_[k]]);
    t[2] = static_cast<double>(q_) * std::numbers::ln2 + P_.log_gauss(sigma[0], d, nullptr);
    for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1] * std::max(c.p1[owner_[k]], c.p2[owner_[k]]);
    t[3] = lw_max + P_.log_gauss(sigma[0], d, nullptr);
    return t;
  }

  Channels fsn_terms(std::span<const double> sigma, const Combo& c) const {
    Channels t;
    t.fill(kNegInf);
    Eigen::VectorXd d(q_);
    for (Eigen::Index k = 0; k < q_; ++k) d(k) = sigma[owner_[k] + 1];
    Posterior post;
    const double lg = P_.log_gauss(sigma[0], d, skew_normal_ ? &post : nullptr);
    if (!skew_normal_) {
      t[0] = lg;
    } else {
      // E[prod Phi(lambda_k v_k)] = P(Lambda v - W > 0) with W ~ N(0, I) independent of v.
      Eigen::VectorXd lam(q_);
      for (Eigen::Index k = 0; k < q_; ++k) lam(k) = c.p1[owner_[k]];
      const Eigen::VectorXd mean = lam.asDiagonal() * post.mean;
      const Eigen::MatrixXd cov =
          lam.asDiagonal() * post.cov * lam.asDiagonal() + Eigen::MatrixXd::Identity(q_, q_);
      const double prob = positive_orthant_probability(mean, cov, grid_.orthant_tol);
      if (prob > 0.0) t[0] = static_cast<double>(q_) * std::numbers::ln2 + lg + std::log(prob);
    }
    if (bounds_) {
      if (!sup_) throw ConfigError("the FSN family has no finite sup bound");
      const double inf = inf_.value_or(0.0);
      t[1] = inf > 0.0 ? static_cast<double>(q_) * std::log(inf) + lg : kNegInf;
      t[2] = static_cast<double>(q_) * std::log(*sup_) + lg;
      t[3] = t[2];
    }
    return t;
  }

  const Prepared& P_;
  const OracleGrid& grid_;
  bool bounds_;
  Kind kind_ = Kind::Normal;
  Eigen::Index q_ = 0;
  std::vector<std::size_t> owner_;
  std::vector<Combo> combos_;
  bool skew_normal_ = false;
  std::optional<double> sup_;
  std::optional<double> inf_;
  std::string describe_;
};

// log pi(sigma) + log(sigma) at sigma = e^x (the Jacobian of the log-scale substitution).
std::function<double(double)> log_prior_in_log_scale(const PriorStructure& prior, std::size_t dim) {
  if (const auto* pe = std::get_if<PowerExpPrior>(&prior)) {
    const double a = pe->a.at(dim).value;
    const double b = pe->b.at(dim).value;
    return [a, b](double x) { return -2.0 * a * x - (b == 0.0 ? 0.0 : b * std::exp(-2.0 * x)); };
  }
  const auto& hc = std::get<HalfCauchyPrior>(prior);
  if (dim == 0) {
    const double a0 = hc.a0.value;
    return [a0](double x) { return -2.0 * a0 * x; };
  }
  const double s = hc.s.at(dim - 1);
  return [s](double x) {
    const double z = x - std::log(s);
    // log(1 / (1 + e^{2z})) without overflow.
    const double l = z > 0.0 ? -2.0 * z - std::log1p(std::exp(-2.0 * z)) : -std::log1p(std::exp(2.0 * z));
    return x + l;
  };
}

struct AxisNode {
  double x;           // log sigma
  double log_weight;  // Gauss-Legendre weight and prior
  std::size_t level;  // 0-based index of the box that first contains the node
};

std::vector<AxisNode> axis_nodes(double center, const std::vector<double>& halfwidths, int per_panel,
                                 const std::function<double(double)>& log_prior) {
  std::vector<AxisNode> out;
  const auto& rule = quad::gauss_legendre(per_panel);
  const double c = std::log(center);
  double inner = 0.0;
  for (std::size_t j = 0; j < halfwidths.size(); ++j) {
    const double outer = halfwidths[j];
    for (const auto& [lo, hi] : {std::pair{-outer, -inner}, std::pair{inner, outer}}) {
      for (const auto& [t, w] : quad::mapped_nodes(rule, lo, hi)) {
        const double x = c + t;
        out.push_back({x, std::log(w) + log_prior(x), j});
      }
    }
    inner = outer;
  }
  return out;
}

// Per-box cumulative log-integrals for every channel.
struct LevelValues {
  std::vector<Channels> cumulative;
};

LevelValues integrate_levels(const Prepared& P, const PriorStructure& prior, const Integrand& f,
                             const std::vector<double>& halfwidths, const OracleGrid& grid) {
  const ModelSpec& spec = *P.spec;
  const std::size_t dims = spec.r() + 1;
  const std::size_t levels = halfwidths.size();
  std::vector<std::vector<AxisNode>> axes;
  for (std::size_t dim = 0; dim < dims; ++dim) {
    axes.push_back(axis_nodes(P.center, halfwidths, grid.nodes_per_panel, log_prior_in_log_scale(prior, dim)));
  }

  const std::size_t outer = axes[0].size();
  std::vector<std::vector<std::array<LogSum, kChannels>>> partial(
      outer, std::vector<std::array<LogSum, kChannels>>(levels));

  auto work = [&](std::size_t i0) {
    std::vector<double> sigma(dims);
    std::vector<std::size_t> idx(dims, 0);
    idx[0] = i0;
    auto& acc = partial[i0];
    while (true) {
      double lw = 0.0;
      std::size_t level = 0;
      for (std::size_t d = 0; d < dims; ++d) {
        const AxisNode& node = axes[d][idx[d]];
        sigma[d] = std::exp(node.x);
        lw += node.log_weight;
        level = std::max(level, node.level);
      }
      const Channels v = f(sigma);
      for (std::size_t j = 0; j < kChannels; ++j) acc[level][j].add(lw + v[j]);
      std::size_t d = dims - 1;
      while (d > 0) {
        if (++idx[d] < axes[d].size()) break;
        idx[d] = 0;
        --d;
      }
      if (d == 0) break;
    }
  };

  unsigned threads = grid.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : grid.threads;
  threads = std::min<unsigned>(threads, static_cast<unsigned>(outer));
  if (threads <= 1) {
    for (std::size_t i0 = 0; i0 < outer; ++i0) work(i0);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i0 = t; i0 < outer; i0 += threads) work(i0);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  // Fixed-order reduction keeps the result independent of the thread count.
  LevelValues out;
  std::array<LogSum, kChannels> running;
  for (std::size_t level = 0; level < levels; ++level) {
    for (std::size_t i0 = 0; i0 < outer; ++i0) {
      for (std::size_t j = 0; j < kChannels; ++j) running[j].add(partial[i0][level][j].value());
    }
    Channels c;
    for (std::size_t j = 0; j < kChannels; ++j) c[j] = running[j].value();
    out.cumulative.push_back(c);
  }
  return out;
}

std::vector<double> halfwidths_up_to(const OracleGrid& grid, double k) {
  if (!(k > 0.0) || !std::isfinite(k)) throw DomainError("truncation half-width must be positive and finite");
  std::vector<double> hw;
  for (double s : grid.schedule) {
    if (s < k) hw.push_back(s);
  }
  hw.push_back(k);
  return hw;
}

void check_grid(const OracleGrid& grid) {
  if (grid.schedule.empty()) throw ConfigError("empty truncation schedule");
  for (std::size_t j = 0; j < grid.schedule.size(); ++j) {
    if (!(grid.schedule[j] > 0.0) || (j > 0 && !(grid.schedule[j] > grid.schedule[j - 1]))) {
      throw ConfigError("truncation schedule must be positive and increasing");
    }
  }
  if (grid.nodes_per_panel < 1 || grid.shape_nodes < 1 || grid.mixing_nodes < 1) {
    throw ConfigError("node counts must be positive");
  }
}

double rel_change(double log_new, double log_old) {
  if (log_old == kNegInf) return log_new == kNegInf ? 0.0 : std::numeric_limits<double>::infinity();
  return std::expm1(log_new - log_old);
}

}  // namespace

std::string OracleGrid::describe() const {
  std::ostringstream os;
  os << "log-sigma Gauss-Legendre, " << nodes_per_panel << " nodes per panel, half-widths {";
  for (std::size_t j = 0; j < schedule.size(); ++j) os << (j ? ", " : "") << schedule[j];
  os << "}; shape priors " << shape_nodes << " nodes x " << (shape_breaks.size() - 1)
     << " quantile panels; mixing " << mixing_nodes << " nodes x " << (mixing_breaks.size() - 1)
     << " quantile panels";
  return os.str();
}

std::string to_string(ProbeOutcome o) {
  switch (o) {
    case ProbeOutcome::Converges:
      return "CONVERGES";
    case ProbeOutcome::Diverges:
      return "DIVERGES";
    case ProbeOutcome::Inconclusive:
      return "INCONCLUSIVE";
  }
  return "INCONCLUSIVE";
}

ProbeVerdict classify_trace(const std::vector<double>& ks, const std::vector<double>& log_values, double tol,
                            double growth_factor) {
  if (ks.size() != log_values.size()) throw DimensionError("classify_trace: size mismatch");
  ProbeVerdict v;
  v.tol = tol;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    ProbeStep s;
    s.k = ks[j];
    s.log_value = log_values[j];
    s.value = std::exp(log_values[j]);
    s.rel_increment = j == 0 ? 0.0 : rel_change(log_values[j], log_values[j - 1]);
    v.trace.push_back(s);
  }
  const std::size_t K = v.trace.size();
  if (K >= 3 && v.trace[K - 1].rel_increment < tol && v.trace[K - 2].rel_increment < tol) {
    v.outcome = ProbeOutcome::Converges;
    v.reason = "last two relative increments below " + std::to_string(tol);
    return v;
  }
  if (K >= 4) {
    // Increments V_j - V_{j-1}, compared in log space: log(V_{j-1}) + log(rel_j).
    auto log_inc = [&](std::size_t j) {
      const double rel = v.trace[j].rel_increment;
      return rel > 0.0 ? v.trace[j - 1].log_value + std::log(rel) : kNegInf;
    };
    const double i1 = log_inc(K - 3);
    const double i2 = log_inc(K - 2);
    const double i3 = log_inc(K - 1);
    const bool non_decreasing = i1 > kNegInf && i2 >= i1 && i3 >= i2;
    const double growth = std::exp(v.trace[K - 1].log_value - v.trace[K - 4].log_value);
    if (non_decreasing && growth > growth_factor) {
      v.outcome = ProbeOutcome::Diverges;
      v.reason = "increments non-decreasing over the last three expansions, V_K / V_{K-3} = " + std::to_string(growth);
      return v;
    }
  }
  v.outcome = ProbeOutcome::Inconclusive;
  v.reason = "neither convergence nor steady growth over the schedule";
  return v;
}

double log_normal_profile_marginal(const ModelSpec& spec, const Eigen::VectorXd& y, std::span<const double> sigmas) {
  spec.check_response(y);
  if (sigmas.size() != spec.r() + 1) throw DimensionError("need sigma_0..sigma_r");
  for (double s : sigmas) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("scales must be positive and finite");
  }
  // Work in the complement of col(X): with K orthonormal, m = |X'X|^{-1/2} N(K'y; 0, K'VK), and
  // K'VK = sigma_0^2 (I + W W'), W = K'Z diag(sigma_k) / sigma_0. The SVD of W keeps this
  // accurate when the scales differ by many orders of magnitude.
  const Eigen::MatrixXd K = residual_basis(spec.X());
  Eigen::VectorXd dz(static_cast<Eigen::Index>(spec.q()));
  for (std::size_t k = 0; k < spec.q(); ++k) dz(static_cast<Eigen::Index>(k)) = sigmas[spec.factor_of(k) + 1] / sigmas[0];
  const Eigen::MatrixXd W = K.transpose() * spec.Z() * dz.asDiagonal();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeFullU);
  const Eigen::VectorXd yt = K.transpose() * y;
  const Eigen::VectorXd proj = svd.matrixU().transpose() * yt;
  const Eigen::VectorXd& s = svd.singularValues();
  double log_det = 0.0;
  double quad = yt.squaredNorm();
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    const double s2 = s(j) * s(j);
    log_det += std::log1p(s2);
    quad -= s2 / (1.0 + s2) * proj(j) * proj(j);
  }
  const double np = static_cast<double>(spec.n() - spec.p());
  const double log_det_xx = std::log((spec.X().transpose() * spec.X()).determinant());
  const double s0 = sigmas[0];
  return -0.5 * np * kLog2Pi - 0.5 * log_det_xx - np * std::log(s0) - 0.5 * log_det -
         0.5 * std::max(0.0, quad) / (s0 * s0);
}

double normal_profile_marginal(const ModelSpec& spec, const Eigen::VectorXd& y, std::span<const double> sigmas) {
  return std::exp(log_normal_profile_marginal(spec, y, sigmas));
}

MarginalEstimate marginal_truncated(const ModelSpec& spec, const Eigen::VectorXd& y, const Truncation& truncation,
                                    const OracleGrid& grid) {
  check_grid(grid);
  check_desk_limits(spec, grid);
  const Prepared P = prepare(spec, y);
  const Integrand f(P, grid, false);
  const auto hw = halfwidths_up_to(grid, truncation.k);
  const LevelValues lv = integrate_levels(P, spec.prior(), f, hw, grid);
  MarginalEstimate m;
  m.truncation = truncation;
  m.log_value = lv.cumulative.back()[0];
  m.value = std::exp(m.log_value);
  m.center_scale = P.center;
  if (lv.cumulative.size() >= 2) m.rel_increment = rel_change(m.log_value, lv.cumulative[lv.cumulative.size() - 2][0]);
  m.grid_spec = grid.describe() + "; " + f.describe();
  return m;
}

ProbeVerdict propriety_probe(const ModelSpec& spec, const Eigen::VectorXd& y, const OracleGrid& grid, double tol) {
  check_grid(grid);
  check_desk_limits(spec, grid);
  const Prepared P = prepare(spec, y);
  const Integrand f(P, grid, false);
  const LevelValues lv = integrate_levels(P, spec.prior(), f, grid.schedule, grid);
  std::vector<double> logs;
  for (const auto& c : lv.cumulative) logs.push_back(c[0]);
  return classify_trace(grid.schedule, logs, tol);
}

BoundingResult bounding_integrals(const ModelSpec& spec, const Eigen::VectorXd& y, const Truncation& truncation,
                                  const OracleGrid& grid) {
  check_grid(grid);
  check_desk_limits(spec, grid);
  if (std::holds_alternative<SmnEffects>(spec.effects())) {
    throw ConfigError("pointwise density bounds are available for two-piece normal, FSN and normal effects");
  }
  const Prepared P = prepare(spec, y);
  const Integrand f(P, grid, true);
  const auto hw = halfwidths_up_to(grid, truncation.k);
  const LevelValues lv = integrate_levels(P, spec.prior(), f, hw, grid);
  BoundingResult out;
  out.truncation = truncation;
  const Channels& c = lv.cumulative.back();
  out.log_value = c[0];
  out.log_lower = c[1];
  out.log_upper = c[2];
  out.log_upper_max = c[3];

  const auto* tpn = std::get_if<TpnEffects>(&spec.effects());
  const auto* pe = std::get_if<PowerExpPrior>(&spec.prior());
  if (tpn && pe) {
    // theta = sigma h (lower) and theta = sigma H (upper): the shape integrals separate
    // and b_i moves to b_i m^2 and b_i M^2 respectively.
    const double m = tpn->param->m;
    const double M = tpn->param->M;
    double log_d = 0.0;
    double log_e = 0.0;
    for (std::size_t i = 0; i < spec.r(); ++i) {
      const double qi = static_cast<double>(spec.factor_sizes()[i]);
      const double ai = pe->a[i + 1].value;
      log_d += std::log(condition_d_integral(spec.factor_sizes()[i], ai, *tpn->param, tpn->shape_priors[i]));
      log_e += std::log(condition_e_integral(ai, *tpn->param, tpn->shape_priors[i]));
      log_d += qi * std::numbers::ln2;
      log_e += qi * std::numbers::ln2;
    }
    auto scaled = [&](double factor) {
      PowerExpPrior p = *pe;
      for (std::size_t i = 1; i < p.b.size(); ++i) p.b[i] = Hyper(p.b[i].exact * rational_from_double(factor));
      return spec.with_prior(p).with_effects(NormalEffects{});
    };
    const ModelSpec lower_spec = scaled(m * m);
    const ModelSpec upper_spec = scaled(M * M);
    const Prepared Pl = prepare(lower_spec, y);
    const Prepared Pu = prepare(upper_spec, y);
    const Integrand fl(Pl, grid, false);
    const Integrand fu(Pu, grid, false);
    const double log_mn_lower = integrate_levels(Pl, lower_spec.prior(), fl, hw, grid).cumulative.back()[0];
    const double log_mn_upper = integrate_levels(Pu, upper_spec.prior(), fu, hw, grid).cumulative.back()[0];
    out.separated_available = std::isfinite(log_d) && std::isfinite(log_e);
    out.log_lower_separated = log_mn_lower + log_d;
    out.log_upper_separated = log_mn_upper + log_e;
  }
  return out;
}

std::string probe_trace_csv(const ProbeVerdict& verdict) {
  std::ostringstream os;
  os.precision(17);
  os << "k,value,rel_increment\n";
  for (const auto& s : verdict.trace) os << s.k << ',' << s.value << ',' << s.rel_increment << '\n';
  return os.str();
}

}  // namespace flexlmm
