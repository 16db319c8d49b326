#include "flexlmm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "flexlmm/diagnostics.hpp"
#include "flexlmm/errors.hpp"
#include "flexlmm/quadrature.hpp"

namespace flexlmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double x, double y) {
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  const double m = std::max(x, y);
  return m + std::log(std::exp(x - m) + std::exp(y - m));
}

double silverman_bandwidth(std::vector<double> x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  std::sort(x.begin(), x.end());
  auto at = [&](double w) {
    const double pos = w * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
  };
  const double iqr = at(0.75) - at(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(n, -0.2);
}

// log pi(sigma) + log sigma at sigma = e^x.
double log_scale_prior(const PriorStructure& prior, std::size_t dim, double x) {
  if (const auto* pe = std::get_if<PowerExpPrior>(&prior)) {
    const double a = pe->a.at(dim).value;
    const double b = pe->b.at(dim).value;
    return -2.0 * a * x - (b == 0.0 ? 0.0 : b * std::exp(-2.0 * x));
  }
  const auto& hc = std::get<HalfCauchyPrior>(prior);
  if (dim == 0) return -2.0 * hc.a0.value * x;
  const double t = 2.0 * (x - std::log(hc.s.at(dim - 1)));
  return x - (t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)));
}

struct ScaleNode {
  double sigma;
  double log_weight;
  std::size_t level;
};

}  // namespace

SavageDickeyResult savage_dickey(std::span<const double> draws, const ShapePrior& prior, double gamma0,
                                 const SavageDickeyOptions& options) {
  if (prior.is_point_mass()) throw DomainError("savage_dickey: a point-mass prior has no density at gamma0");
  if (!(gamma0 > prior.lower() && gamma0 < prior.upper())) {
    std::ostringstream os;
    os << "savage_dickey: gamma0 = " << gamma0 << " is not interior to the support of " << prior.describe();
    throw DomainError(os.str());
  }
  if (draws.size() < 2 * options.batches || options.batches < 2) {
    throw DomainError("savage_dickey: need at least " + std::to_string(2 * std::max<std::size_t>(options.batches, 2)) +
                      " draws");
  }
  SavageDickeyResult out;
  out.draws = draws.size();
  out.prior_density = prior.pdf(gamma0);
  if (!(out.prior_density > 0.0)) throw DomainError("savage_dickey: prior density vanishes at gamma0");
  const std::vector<double> x(draws.begin(), draws.end());
  double h = silverman_bandwidth(x);
  if (!(h > 0.0)) {
    out.warnings.push_back("draws have no spread; bandwidth set from the prior's scale");
    h = 1e-3 * std::max(1.0, std::abs(gamma0));
  }
  out.bandwidth = h;
  const double lo = prior.lower();
  const double hi = prior.upper();
  const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi));
  auto kernel = [&](double d) { return norm * std::exp(-0.5 * d * d / (h * h)); };
  std::vector<double> terms(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    double k = kernel(gamma0 - x[t]);
    if (std::isfinite(lo)) k += kernel(gamma0 - (2.0 * lo - x[t]));
    if (std::isfinite(hi)) k += kernel(gamma0 - (2.0 * hi - x[t]));
    terms[t] = k;
    if (std::abs(x[t] - gamma0) <= h) ++out.draws_near;
  }
  double mean = 0.0;
  for (double v : terms) mean += v;
  mean /= static_cast<double>(terms.size());
  out.posterior_density = mean;
  double se = batch_means_se(terms, options.batches);
  if (out.draws_near < options.min_near) {
    std::ostringstream os;
    os << "only " << out.draws_near << " draws within one bandwidth of gamma0; error bar inflated";
    out.warnings.push_back(os.str());
    se *= std::sqrt(static_cast<double>(options.min_near) / static_cast<double>(std::max<std::size_t>(out.draws_near, 1)));
    se = std::max(se, mean);
  }
  out.posterior_density_se = se;
  out.bf = mean / out.prior_density;
  out.se = se / out.prior_density;
  return out;
}

SavageDickeyResult savage_dickey(const ChainOutput& chain, const ShapePrior& prior, double gamma0,
                                 const std::string& column, const SavageDickeyOptions& options) {
  const Eigen::VectorXd c = chain.column(column);
  return savage_dickey(std::span<const double>(c.data(), static_cast<std::size_t>(c.size())), prior, gamma0, options);
}

ChainOutput prior_only_chain(const ShapePrior& prior, std::size_t draws, std::uint64_t seed, const std::string& column) {
  ChainOutput out;
  out.names = {column};
  out.seed = seed;
  out.draws.resize(static_cast<Eigen::Index>(draws), 1);
  Rng rng = chain_rng(seed, 0);
  for (std::size_t t = 0; t < draws; ++t) out.draws(static_cast<Eigen::Index>(t), 0) = prior.sample(rng);
  return out;
}

SmnConstant smn_constant(std::span<const double> a, const MixingDistribution& mixing, const ShapePrior& delta_prior) {
  SmnConstant out;
  if (mixing.is_point_mass()) return out;
  bool diverged = false;
  auto integrand = [&](double delta) {
    double v = 1.0;
    for (double ai : a) {
      const double m = mixing_moment(mixing, -ai, delta);
      if (!std::isfinite(m)) {
        diverged = true;
        return std::numeric_limits<double>::infinity();
      }
      v *= m;
    }
    return v;
  };
  auto divergent = [&](const std::string& why) {
    out.value = std::numeric_limits<double>::infinity();
    out.finite = false;
    out.diagnostic = why;
    return out;
  };
  if (delta_prior.is_point_mass()) {
    const double v = integrand(delta_prior.point());
    if (diverged) return divergent("E[tau^-a] diverges at delta = " + std::to_string(delta_prior.point()));
    out.value = v;
    return out;
  }
  // Probe the ends of the support before integrating against the prior density.
  for (double w : {1e-12, 1e-8, 1e-4, 0.5, 1.0 - 1e-4, 1.0 - 1e-8}) {
    integrand(delta_prior.quantile(w));
    if (diverged) {
      return divergent("E[tau^-a] diverges at delta = " + std::to_string(delta_prior.quantile(w)) +
                       " inside the support of " + delta_prior.describe());
    }
  }
  const double lo = std::max(delta_prior.lower(), mixing.delta_lo());
  const double hi = std::min(delta_prior.upper(), mixing.delta_hi());
  try {
    const auto r = quad::integrate(
        [&](double delta) {
          const double w = delta_prior.pdf(delta);
          return w > 0.0 ? w * integrand(delta) : 0.0;
        },
        lo, hi, {1e-12, 1e-10, 4000});
    if (diverged || !std::isfinite(r.value)) return divergent("E[tau^-a] diverges inside the support of delta");
    out.value = r.value;
  } catch (const NumericalError& e) {
    return divergent(std::string("quadrature over delta did not converge: ") + e.what());
  }
  return out;
}

ProbeVerdict normal_marginal_by_scales(const ModelSpec& spec, const Eigen::VectorXd& y, const OracleGrid& grid) {
  spec.check_response(y);
  if (grid.schedule.empty()) throw ConfigError("normal_marginal_by_scales: empty schedule");
  const double s2 = sse(y, spec.X()) / static_cast<double>(spec.n() - spec.p());
  if (!(s2 > 0.0)) throw DomainError("normal_marginal_by_scales: the residual sum of squares is zero");
  const double centre = 0.5 * std::log(s2);
  const std::size_t dims = spec.r() + 1;
  const auto& rule = quad::gauss_legendre(grid.nodes_per_panel);
  std::vector<std::vector<ScaleNode>> axes(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    double inner = 0.0;
    for (std::size_t level = 0; level < grid.schedule.size(); ++level) {
      const double outer = grid.schedule[level];
      for (const auto& [lo, hi] : {std::pair{-outer, -inner}, std::pair{inner, outer}}) {
        for (const auto& [t, w] : quad::mapped_nodes(rule, lo, hi)) {
          const double x = centre + t;
          axes[d].push_back({std::exp(x), std::log(w) + log_scale_prior(spec.prior(), d, x), level});
        }
      }
      inner = outer;
    }
  }
  std::vector<double> per_level(grid.schedule.size(), kNegInf);
  std::vector<std::size_t> idx(dims, 0);
  std::vector<double> sigmas(dims);
  while (true) {
    double lw = 0.0;
    std::size_t level = 0;
    for (std::size_t d = 0; d < dims; ++d) {
      const auto& node = axes[d][idx[d]];
      sigmas[d] = node.sigma;
      lw += node.log_weight;
      level = std::max(level, node.level);
    }
    per_level[level] = log_add(per_level[level], lw + log_normal_profile_marginal(spec, y, sigmas));
    std::size_t d = 0;
    while (d < dims && ++idx[d] == axes[d].size()) idx[d++] = 0;
    if (d == dims) break;
  }
  std::vector<double> cumulative;
  double acc = kNegInf;
  for (double v : per_level) {
    acc = log_add(acc, v);
    cumulative.push_back(acc);
  }
  return classify_trace(grid.schedule, cumulative);
}

InvarianceReport smn_bf_invariance_demo(const ModelSpec& spec, const std::vector<Eigen::VectorXd>& datasets,
                                        const SmnEffects& mixing1, const SmnEffects& mixing2, const OracleGrid& grid) {
  const auto* pe = std::get_if<PowerExpPrior>(&spec.prior());
  if (pe == nullptr) throw ConfigError("smn_bf_invariance_demo: requires the power prior on the scales");
  for (std::size_t i = 1; i < pe->b.size(); ++i) {
    if (pe->b[i].exact != 0) throw ConfigError("smn_bf_invariance_demo: requires b_1..b_r = 0");
  }
  if (datasets.empty()) throw ConfigError("smn_bf_invariance_demo: no datasets");
  std::vector<double> a;
  for (std::size_t i = 1; i < pe->a.size(); ++i) a.push_back(pe->a[i].value);

  InvarianceReport report;
  const std::vector<const SmnEffects*> mixings = {&mixing1, &mixing2};
  std::vector<SmnConstant> constants;
  for (const auto* m : mixings) {
    std::string name = m->mixing->name();
    if (!m->mixing->is_point_mass()) name += " / delta " + m->delta_prior.describe();
    report.mixings.push_back(name);
    constants.push_back(smn_constant(a, *m->mixing, m->delta_prior));
    if (!constants.back().finite) {
      report.incomplete = true;
      report.notes.push_back(name + ": " + constants.back().diagnostic);
    }
  }
  report.expected_bayes_factor = constants[0].value / constants[1].value;
  const ModelSpec normal = spec.with_effects(NormalEffects{});
  for (std::size_t j = 0; j < datasets.size(); ++j) {
    const ProbeVerdict mn = normal_marginal_by_scales(normal, datasets[j], grid);
    if (mn.outcome != ProbeOutcome::Converges) {
      report.incomplete = true;
      report.notes.push_back("dataset " + std::to_string(j) + ": normal marginal " + to_string(mn.outcome));
    }
    std::vector<double> log_m;
    for (std::size_t k = 0; k < mixings.size(); ++k) {
      const ModelSpec smn = spec.with_effects(*mixings[k]);
      const ProbeVerdict pv = propriety_probe(smn, datasets[j], grid);
      InvarianceRow row;
      row.dataset = j;
      row.mixing = report.mixings[k];
      row.log_m_smn = pv.trace.back().log_value;
      row.log_m_normal = mn.trace.back().log_value;
      row.ratio = std::exp(row.log_m_smn - row.log_m_normal);
      row.constant = constants[k].value;
      row.deviation = row.ratio / row.constant - 1.0;
      row.outcome = pv.outcome;
      if (pv.outcome != ProbeOutcome::Converges) {
        report.incomplete = true;
        report.notes.push_back("dataset " + std::to_string(j) + ", " + row.mixing + ": oracle " + to_string(pv.outcome));
      }
      if (std::isfinite(row.deviation)) {
        report.max_ratio_deviation = std::max(report.max_ratio_deviation, std::abs(row.deviation));
      }
      log_m.push_back(row.log_m_smn);
      report.rows.push_back(row);
    }
    report.bayes_factors.push_back(std::exp(log_m[0] - log_m[1]));
  }
  for (std::size_t j = 0; j < report.bayes_factors.size(); ++j) {
    for (std::size_t k = j + 1; k < report.bayes_factors.size(); ++k) {
      report.max_bf_deviation =
          std::max(report.max_bf_deviation, std::abs(report.bayes_factors[j] / report.bayes_factors[k] - 1.0));
    }
  }
  return report;
}

}  // namespace flexlmm
