#include <doctest.h>

#include <cmath>
#include <random>

#include "flexlmm/diagnostics.hpp"
#include "flexlmm/errors.hpp"
#include "flexlmm/gaussian.hpp"
#include "flexlmm/oracle.hpp"
#include "flexlmm/quadrature.hpp"
#include "flexlmm/sampler.hpp"

using namespace flexlmm;

namespace {

std::shared_ptr<const SkewParameterisation> eps() { return default_registry().get("epsilon_skew"); }

PowerExpPrior power_exp(std::vector<std::string> a, std::vector<std::string> b) {
  PowerExpPrior p;
  for (const auto& s : a) p.a.push_back(Hyper::parse(s));
  for (const auto& s : b) p.b.push_back(Hyper::parse(s));
  return p;
}

Eigen::VectorXd d1_response() {
  Eigen::VectorXd y(6);
  y << 1.2, 0.7, -0.4, 0.1, 2.3, 1.6;
  return y;
}

ModelSpec d1(PriorStructure prior, RandomEffects re) {
  auto [X, Z] = one_way_design(3, 2);
  return ModelSpec(X, Z, {3}, std::move(re), std::move(prior));
}

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// Posterior mean of log sigma_j under normal effects by quadrature of the profile marginal on a log-scale grid.
double quadrature_mean_log_sigma(const ModelSpec& spec, const Eigen::VectorXd& y, std::size_t j) {
  const double c = std::log(std::sqrt(sse(y, spec.X()) / static_cast<double>(spec.n() - spec.p())));
  const auto nodes = quad::mapped_nodes(quad::gauss_legendre(300), c - 8.0, c + 8.0);
  double num = 0.0;
  double den = 0.0;
  for (const auto& [x0, w0] : nodes) {
    for (const auto& [x1, w1] : nodes) {
      const double sig[] = {std::exp(x0), std::exp(x1)};
      double lp = 0.0;
      if (const auto* pe = std::get_if<PowerExpPrior>(&spec.prior())) {
        lp = -2.0 * pe->a[0].value * x0 - pe->b[0].value * std::exp(-2 * x0) - 2.0 * pe->a[1].value * x1 -
             pe->b[1].value * std::exp(-2 * x1);
      } else {
        const auto& hc = std::get<HalfCauchyPrior>(spec.prior());
        lp = -2.0 * hc.a0.value * x0 + x1 - std::log1p(std::exp(2 * x1) / (hc.s[0] * hc.s[0]));
      }
      const double f = w0 * w1 * std::exp(log_normal_profile_marginal(spec, y, sig) + lp);
      num += f * (j == 0 ? x0 : x1);
      den += f;
    }
  }
  return num / den;
}

}  // namespace

TEST_CASE("truncated normal halves against the truncated CDF") {
  Rng rng(3);
  for (auto [mu, sd, positive] : {std::tuple{1.0, 0.7, true}, std::tuple{-3.0, 0.5, true}, std::tuple{2.0, 1.0, false},
                                  std::tuple{-0.2, 2.0, false}}) {
    std::vector<double> draws;
    for (int i = 0; i < 20000; ++i) {
      const double x = truncated_normal_half(rng, mu, sd, positive);
      CHECK((positive ? x >= 0.0 : x <= 0.0));
      draws.push_back(x);
    }
    // Compare with an inverse-CDF sample from the same distribution.
    std::vector<double> ref;
    const double lo = positive ? norm_cdf(-mu / sd) : 0.0;
    const double hi = positive ? 1.0 : norm_cdf(-mu / sd);
    std::uniform_real_distribution<double> u(lo, hi);
    std::mt19937_64 g(9);
    for (int i = 0; i < 20000; ++i) ref.push_back(mu + sd * norm_quantile(u(g)));
    CHECK(ks_two_sample(draws, ref).p_value > 0.001);
  }
}

TEST_CASE("effective sample size oracles") {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n01;
  const std::size_t N = 20000;
  std::vector<double> white(N);
  for (auto& v : white) v = n01(g);
  CHECK(std::abs(effective_sample_size(white) / N - 1.0) < 0.10);
  std::vector<double> ar(N);
  const double rho = 0.9;
  ar[0] = n01(g) / std::sqrt(1 - rho * rho);
  for (std::size_t i = 1; i < N; ++i) ar[i] = rho * ar[i - 1] + n01(g);
  const double nominal = N * (1 - rho) / (1 + rho);
  CHECK(std::abs(effective_sample_size(ar) / nominal - 1.0) < 0.25);
}

TEST_CASE("split R-hat") {
  std::mt19937_64 g(2);
  std::normal_distribution<double> n01;
  std::vector<double> a(2000);
  std::vector<double> b(2000);
  for (auto& v : a) v = n01(g);
  for (auto& v : b) v = n01(g);
  const double r = split_rhat({a, b});
  CHECK(r == doctest::Approx(1.0).epsilon(0.02));
  std::vector<double> shifted = b;
  for (auto& v : shifted) v += 3.0;
  CHECK(split_rhat({a, shifted}) > 1.5);
  const std::vector<double> constant(100, 2.0);
  CHECK(std::isnan(split_rhat({constant, constant})));
}

TEST_CASE("Kolmogorov distribution and two-sample KS") {
  CHECK(kolmogorov_survival(1.0) == doctest::Approx(0.26999967).epsilon(1e-7));
  CHECK(kolmogorov_survival(0.5) == doctest::Approx(0.96394524).epsilon(1e-7));
  CHECK(kolmogorov_survival(0.15) == doctest::Approx(1.0).epsilon(1e-9));
  // Continuity between the two series.
  CHECK(kolmogorov_survival(0.2 - 1e-12) == doctest::Approx(kolmogorov_survival(0.2)).epsilon(1e-9));
  std::mt19937_64 g(4);
  std::normal_distribution<double> n01;
  std::vector<double> a(3000);
  std::vector<double> b(3000);
  for (auto& v : a) v = n01(g);
  for (auto& v : b) v = n01(g) + 0.3;
  CHECK(ks_two_sample(a, b).p_value < 1e-6);
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> y = {4, 5, 6};
  CHECK(ks_two_sample(x, y).statistic == doctest::Approx(1.0));
}

TEST_CASE("conjugate sub-case: beta moments match the closed form") {
  const ModelSpec spec = d1(standard_diffuse_prior(1), NormalEffects{});
  const Eigen::VectorXd y = d1_response();
  const std::vector<double> scales = {0.8, 1.1};
  SamplerOptions o;
  o.iterations = 12000;
  o.burn_in = 2000;
  o.seed = 42;
  o.fixed_scales = scales;
  const ChainOutput ch = mwg_sample(spec, y, o);
  CHECK(ch.draws.rows() == 10000);
  const auto [mean, cov] = conjugate_beta_posterior(spec, y, scales);
  const Eigen::VectorXd b = ch.column("beta_1");
  const double m = b.mean();
  const double mcse = mc_standard_error(as_span(b));
  CHECK(std::abs(m - mean(0)) < 3.0 * mcse);
  Eigen::VectorXd sq = (b.array() - mean(0)).square();
  const double var = sq.mean();
  CHECK(std::abs(var - cov(0, 0)) < 3.0 * mc_standard_error(as_span(sq)));
  // Gibbs everywhere except the random walk along the null space of (X : Z).
  for (const auto& [name, rate] : ch.acceptance_rates) CHECK(name.rfind("null_", 0) == 0);
}

TEST_CASE("stationarity: chains started at exact posterior draws do not drift") {
  const ModelSpec spec = d1(standard_diffuse_prior(1), NormalEffects{});
  const Eigen::VectorXd y = d1_response();
  const std::vector<double> scales = {0.8, 1.1};
  // Joint Gaussian posterior of (beta, u) at fixed scales.
  const Eigen::Index p = 1;
  const Eigen::Index q = 3;
  Eigen::MatrixXd W(6, p + q);
  W << spec.X(), spec.Z();
  Eigen::MatrixXd prec = W.transpose() * W / (scales[0] * scales[0]);
  for (Eigen::Index k = 0; k < q; ++k) prec(p + k, p + k) += 1.0 / (scales[1] * scales[1]);
  const Eigen::LLT<Eigen::MatrixXd> llt(prec);
  const Eigen::VectorXd mu = llt.solve(W.transpose() * y / (scales[0] * scales[0]));
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(p + q, p + q));
  const Eigen::MatrixXd L = cov.llt().matrixL();
  std::mt19937_64 g(7);
  std::normal_distribution<double> n01;
  const int chains = 2000;
  std::vector<double> finals;
  for (int c = 0; c < chains; ++c) {
    Eigen::VectorXd z(p + q);
    for (Eigen::Index j = 0; j < p + q; ++j) z(j) = n01(g);
    const Eigen::VectorXd s = mu + L * z;
    SamplerOptions o;
    o.iterations = 6;
    o.burn_in = 1;
    o.seed = 1000 + static_cast<std::uint64_t>(c);
    o.fixed_scales = scales;
    o.initial = SamplerState{s.head(p), s.tail(q), scales, {}, 0.0};
    finals.push_back(mwg_sample(spec, y, o).draws(4, 0));
  }
  double m = 0.0;
  for (double v : finals) m += v;
  m /= chains;
  double v = 0.0;
  for (double x : finals) v += (x - m) * (x - m);
  v /= chains - 1;
  const double se = std::sqrt(cov(0, 0) / chains);
  CHECK(std::abs(m - mu(0)) < 3.5 * se);
  CHECK(std::abs(v / cov(0, 0) - 1.0) < 3.5 * std::sqrt(2.0 / chains));
}

TEST_CASE("determinism and independent streams") {
  const ModelSpec spec = d1(standard_diffuse_prior(1), TpnEffects{eps(), {ShapePrior::uniform(-1, 1)}});
  const Eigen::VectorXd y = d1_response();
  SamplerOptions o;
  o.iterations = 600;
  o.burn_in = 100;
  o.seed = 5;
  const ChainOutput a = mwg_sample(spec, y, o);
  const ChainOutput b = mwg_sample(spec, y, o);
  CHECK((a.draws.array() == b.draws.array()).all());
  o.chain_index = 1;
  const ChainOutput c = mwg_sample(spec, y, o);
  CHECK(!(a.draws.array() == c.draws.array()).all());
  const auto pair = sample_chains(spec, y, o, 2, 2);
  o.chain_index = 1;
  CHECK((pair[1].draws.array() == c.draws.array()).all());
}

TEST_CASE("posterior of log scales matches quadrature of the marginal") {
  const Eigen::VectorXd y = d1_response();
  HalfCauchyPrior hc;
  hc.a0 = Hyper::parse("0");
  hc.s = {1.0};
  for (const PriorStructure& prior : {PriorStructure(power_exp({"0", "1"}, {"0", "0.5"})), PriorStructure(hc)}) {
    const ModelSpec spec = d1(prior, NormalEffects{});
    SamplerOptions o;
    o.iterations = 42000;
    o.burn_in = 2000;
    o.seed = 11;
    const ChainOutput ch = mwg_sample(spec, y, o);
    for (std::size_t j = 0; j < 2; ++j) {
      const Eigen::VectorXd ls = ch.column("sigma_" + std::to_string(j)).array().log();
      const double expected = quadrature_mean_log_sigma(spec, y, j);
      CHECK(std::abs(ls.mean() - expected) < 3.5 * mc_standard_error(as_span(ls)));
    }
  }
}

TEST_CASE("symmetric two-piece chain is indistinguishable from the normal chain") {
  const Eigen::VectorXd y = d1_response();
  const auto prior = power_exp({"0", "1"}, {"0", "1"});
  SamplerOptions o;
  o.iterations = 22000;
  o.burn_in = 2000;
  o.seed = 21;
  const ChainOutput normal = mwg_sample(d1(prior, NormalEffects{}), y, o);
  o.seed = 22;
  const ChainOutput tpn = mwg_sample(d1(prior, TpnEffects{eps(), {ShapePrior::point_mass(0.0)}}), y, o);
  const Eigen::VectorXd a = normal.column("beta_1");
  const Eigen::VectorXd b = tpn.column("beta_1");
  const std::size_t k = static_cast<std::size_t>(
      std::ceil(a.size() / std::min(effective_sample_size(as_span(a)), effective_sample_size(as_span(b)))));
  const auto ta = thin(as_span(a), k);
  const auto tb = thin(as_span(b), k);
  CHECK(ks_two_sample(ta, tb).p_value > 0.01);
}

TEST_CASE("support preservation and tuned acceptance rates") {
  const Eigen::VectorXd y = d1_response();
  SUBCASE("two-piece normal, uniform gamma") {
    const ModelSpec spec = d1(standard_diffuse_prior(1), TpnEffects{eps(), {ShapePrior::uniform(-1, 1)}});
    SamplerOptions o;
    o.iterations = 5000;
    o.burn_in = 1000;
    const ChainOutput ch = mwg_sample(spec, y, o);
    CHECK((ch.column("sigma_0").array() > 0).all());
    CHECK((ch.column("sigma_1").array() > 0).all());
    CHECK((ch.column("gamma_1").array().abs() < 1).all());
    REQUIRE(ch.acceptance_rates.count("gamma_1") == 1);
    CHECK(ch.acceptance_rates.at("gamma_1") >= 0.1);
    CHECK(ch.acceptance_rates.at("gamma_1") <= 0.6);
  }
  SUBCASE("skew-normal FSN") {
    const ModelSpec spec = d1(power_exp({"0", "1"}, {"0", "1"}),
                              FsnEffects{fsn_family_by_name("skew_normal"), {ShapePrior::truncated_normal(0, 2, -1e300, 1e300)}});
    SamplerOptions o;
    o.iterations = 5000;
    o.burn_in = 1000;
    const ChainOutput ch = mwg_sample(spec, y, o);
    CHECK((ch.column("sigma_1").array() > 0).all());
    for (const auto& [name, rate] : ch.acceptance_rates) {
      CAPTURE(name);
      CHECK(rate >= 0.1);
      CHECK(rate <= 0.6);
    }
  }
  SUBCASE("Student-t SMN under the half-Cauchy structure") {
    HalfCauchyPrior hc;
    hc.a0 = Hyper::parse("0");
    hc.s = {1.0};
    const ModelSpec spec = d1(hc, SmnEffects{mixing_by_name("gamma"), ShapePrior::gamma(2, 0.5)});
    SamplerOptions o;
    o.iterations = 5000;
    o.burn_in = 1000;
    const ChainOutput ch = mwg_sample(spec, y, o);
    CHECK((ch.column("delta").array() > 0).all());
    for (const auto& [name, rate] : ch.acceptance_rates) {
      CAPTURE(name);
      CHECK(rate >= 0.1);
      CHECK(rate <= 0.6);
    }
  }
}

TEST_CASE("propriety gate") {
  const Eigen::VectorXd y = d1_response();
  const ModelSpec improper = d1(power_exp({"0", "0"}, {"0", "0"}), NormalEffects{});
  SamplerOptions o;
  o.iterations = 200;
  o.burn_in = 50;
  CHECK_THROWS_AS(mwg_sample(improper, y, o), ConfigError);
  o.override_propriety = true;
  const ChainOutput ch = mwg_sample(improper, y, o);
  CHECK(ch.gate_verdict == Verdict::Improper);
  CHECK(!ch.warnings.empty());
  // No checker for SMN under the power-exponential structure.
  const ModelSpec smn = d1(standard_diffuse_prior(1), SmnEffects{mixing_by_name("gamma"), ShapePrior::point_mass(2)});
  o.override_propriety = false;
  CHECK_THROWS_AS(mwg_sample(smn, y, o), ConfigError);
}

TEST_CASE("multi-chain diagnostics") {
  const ModelSpec spec = d1(standard_diffuse_prior(1), NormalEffects{});
  const Eigen::VectorXd y = d1_response();
  SamplerOptions o;
  o.iterations = 3000;
  o.burn_in = 500;
  const auto chains = sample_chains(spec, y, o, 3);
  const DiagnosticsReport rep = diagnostics(chains);
  CHECK(rep.chains == 3);
  CHECK(rep.parameters.at("beta_1").split_rhat < 1.1);
  CHECK(rep.parameters.at("beta_1").ess > 100);
  const DiagnosticsReport single = diagnostics({chains[0]});
  CHECK(!single.warnings.empty());
  // Two constant chains: fixed scales and a point-mass shape leave sigma constant.
  o.fixed_scales = std::vector<double>{1.0, 1.0};
  const auto fixed = sample_chains(spec, y, o, 2);
  const DiagnosticsReport degenerate = diagnostics(fixed);
  CHECK(degenerate.parameters.at("sigma_0").rhat_undefined);
}
