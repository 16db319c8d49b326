#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "flexlmm/errors.hpp"
#include "flexlmm/quadrature.hpp"
#include "flexlmm/selection.hpp"

using namespace flexlmm;

namespace {

PowerExpPrior power_exp(std::vector<std::string> a, std::vector<std::string> b) {
  PowerExpPrior p;
  for (const auto& s : a) p.a.push_back(Hyper::parse(s));
  for (const auto& s : b) p.b.push_back(Hyper::parse(s));
  return p;
}

ModelSpec d1(PriorStructure prior, RandomEffects re) {
  auto [X, Z] = one_way_design(3, 2);
  return ModelSpec(X, Z, {3}, std::move(re), std::move(prior));
}

Eigen::VectorXd simulate_one_way(std::size_t groups, std::size_t per_group, double sigma1, double sigma0,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(static_cast<Eigen::Index>(groups * per_group));
  for (std::size_t g = 0; g < groups; ++g) {
    const double u = sigma1 * z(rng);
    for (std::size_t k = 0; k < per_group; ++k) y(static_cast<Eigen::Index>(g * per_group + k)) = 1.0 + u + sigma0 * z(rng);
  }
  return y;
}

// E[tau^{1/2}] for tau ~ Gamma(d/2, rate d/2), written out directly.
double student_half_moment(double d) {
  return std::exp(std::lgamma(0.5 * (d + 1.0)) - std::lgamma(0.5 * d)) / std::sqrt(0.5 * d);
}

SmnEffects student(double delta) { return SmnEffects{mixing_by_name("gamma"), ShapePrior::point_mass(delta)}; }
SmnEffects normal_mixing() { return SmnEffects{mixing_by_name("point_mass"), ShapePrior::point_mass(1.0)}; }

}  // namespace

TEST_CASE("SMN constant") {
  const auto gamma_mix = mixing_by_name("gamma");
  const std::vector<double> half = {-0.5};

  SUBCASE("point-mass mixing gives one for any a") {
    for (double a : {-1.0, -0.5, 0.0, 0.7, 3.0}) {
      const std::vector<double> av = {a, a};
      CHECK(smn_constant(av, *mixing_by_name("point_mass"), ShapePrior::gamma(2.0, 1.0)).value == 1.0);
    }
  }
  SUBCASE("Student-t closed forms") {
    CHECK(smn_constant(half, *gamma_mix, ShapePrior::point_mass(2.0)).value ==
          doctest::Approx(std::tgamma(1.5)).epsilon(1e-12));
    CHECK(smn_constant(half, *gamma_mix, ShapePrior::point_mass(2.0)).value == doctest::Approx(0.886227).epsilon(1e-6));
    CHECK(smn_constant(half, *gamma_mix, ShapePrior::point_mass(4.0)).value ==
          doctest::Approx(std::tgamma(2.5) / (std::tgamma(2.0) * std::sqrt(2.0))).epsilon(1e-12));
    CHECK(smn_constant(half, *gamma_mix, ShapePrior::point_mass(4.0)).value == doctest::Approx(0.939986).epsilon(1e-6));
    const std::vector<double> two = {-0.5, -1.0};
    // E[tau] = 1 for every delta.
    CHECK(smn_constant(two, *gamma_mix, ShapePrior::point_mass(3.0)).value ==
          doctest::Approx(student_half_moment(3.0)).epsilon(1e-12));
  }
  SUBCASE("integration over a gamma prior on delta") {
    const double shape = 2.0;
    const double rate = 0.5;
    auto integrand = [&](double d) {
      const double prior = std::exp(shape * std::log(rate) + (shape - 1.0) * std::log(d) - rate * d - std::lgamma(shape));
      return student_half_moment(d) * prior;
    };
    const double expected = quad::integrate(integrand, 0.0, quad::kInf, {1e-13, 1e-11, 4000}).value;
    const SmnConstant c = smn_constant(half, *gamma_mix, ShapePrior::gamma(shape, rate));
    CHECK(c.finite);
    CHECK(c.value == doctest::Approx(expected).epsilon(1e-8));
  }
  SUBCASE("divergent moments are flagged") {
    const std::vector<double> one = {1.0};
    SmnConstant c = smn_constant(one, *gamma_mix, ShapePrior::point_mass(1.5));
    CHECK_FALSE(c.finite);
    CHECK(std::isinf(c.value));
    CHECK_FALSE(c.diagnostic.empty());
    c = smn_constant(one, *gamma_mix, ShapePrior::gamma(2.0, 0.5));
    CHECK_FALSE(c.finite);
    c = smn_constant(one, *gamma_mix, ShapePrior::uniform(3.0, 5.0));
    CHECK(c.finite);
  }
}

TEST_CASE("Savage-Dickey ratio on prior-only chains is one") {
  struct Case {
    ShapePrior prior;
    double gamma0;
  };
  const std::vector<Case> cases = {
      {ShapePrior::uniform(-1.0, 1.0), 0.0},
      {ShapePrior::uniform(-1.0, 1.0), 0.97},
      {ShapePrior::truncated_normal(0.0, 0.5, -1.0, 1.0), 0.3},
      {ShapePrior::truncated_normal(1.0, 1.0, 0.0, 10.0), 0.1},
      {ShapePrior::gamma(2.0, 0.5), 3.0},
      {ShapePrior::gamma(1.0, 1.0), 0.05},
  };
  std::uint64_t seed = 11;
  for (const auto& c : cases) {
    CAPTURE(c.prior.describe());
    CAPTURE(c.gamma0);
    const ChainOutput chain = prior_only_chain(c.prior, 40000, seed++);
    const SavageDickeyResult r = savage_dickey(chain, c.prior, c.gamma0);
    CHECK(r.se > 0.0);
    CHECK(std::abs(r.bf - 1.0) < 3.0 * r.se);
    CHECK(r.warnings.empty());
  }
}

TEST_CASE("Savage-Dickey input checks and warnings") {
  const ShapePrior u = ShapePrior::uniform(-1.0, 1.0);
  const ChainOutput chain = prior_only_chain(u, 1000, 3);
  CHECK_THROWS_AS(savage_dickey(chain, ShapePrior::point_mass(0.0), 0.0), DomainError);
  CHECK_THROWS_AS(savage_dickey(chain, u, 1.0), DomainError);
  CHECK_THROWS_AS(savage_dickey(chain, u, 1.5), DomainError);
  CHECK_THROWS_AS(savage_dickey(chain, u, 0.0, "lambda_1"), ConfigError);

  // Draws concentrated away from gamma0.
  std::vector<double> far(500);
  for (std::size_t i = 0; i < far.size(); ++i) far[i] = 0.8 + 0.01 * std::sin(static_cast<double>(i));
  const SavageDickeyResult r = savage_dickey(far, u, -0.5);
  CHECK_FALSE(r.warnings.empty());
  CHECK(r.se >= r.bf);
}

TEST_CASE("Savage-Dickey favours symmetry on data from the symmetric model") {
  auto [X, Z] = one_way_design(20, 3);
  auto param = default_registry().get("epsilon_skew");
  const ShapePrior prior = ShapePrior::uniform(-1.0, 1.0);
  const ModelSpec spec(X, Z, {20}, TpnEffects{param, {prior}}, standard_diffuse_prior(1));
  double total = 0.0;
  const int replicates = 4;
  for (int rep = 0; rep < replicates; ++rep) {
    const Eigen::VectorXd y = simulate_one_way(20, 3, 2.0, 0.5, 100 + static_cast<std::uint64_t>(rep));
    SamplerOptions opts;
    opts.iterations = 22000;
    opts.burn_in = 2000;
    opts.seed = 7 + static_cast<std::uint64_t>(rep);
    const ChainOutput chain = mwg_sample(spec, y, opts);
    const SavageDickeyResult r = savage_dickey(chain, prior, 0.0);
    total += r.bf;
  }
  CHECK(total / replicates > 1.0);
}

TEST_CASE("normal marginal over the scales agrees with the oracle") {
  Eigen::VectorXd y(6);
  y << 1.2, 0.7, -0.4, 0.1, 2.3, 1.6;
  const ModelSpec spec = d1(power_exp({"0", "-1/2"}, {"0", "0"}), NormalEffects{});
  const ProbeVerdict a = normal_marginal_by_scales(spec, y);
  const ProbeVerdict b = propriety_probe(spec, y);
  REQUIRE(a.trace.size() == b.trace.size());
  CHECK(a.outcome == ProbeOutcome::Converges);
  for (std::size_t j = 0; j < a.trace.size(); ++j) CHECK(a.trace[j].log_value == doctest::Approx(b.trace[j].log_value).epsilon(1e-9));
}

TEST_CASE("SMN Bayes factors do not depend on the data") {
  const ModelSpec spec = d1(power_exp({"0", "-1/2"}, {"0", "0"}), NormalEffects{});
  const std::vector<Eigen::VectorXd> data = {simulate_one_way(3, 2, 1.0, 0.7, 1), simulate_one_way(3, 2, 1.0, 0.7, 2),
                                             simulate_one_way(3, 2, 2.0, 0.3, 3)};

  SUBCASE("Student-t against normal") {
    const InvarianceReport r = smn_bf_invariance_demo(spec, {data[0], data[1]}, student(2.0), normal_mixing());
    CHECK_FALSE(r.incomplete);
    REQUIRE(r.rows.size() == 4);
    for (const auto& row : r.rows) {
      if (row.mixing.rfind("gamma", 0) == 0) CHECK(row.ratio == doctest::Approx(0.886227).epsilon(0.01));
      else CHECK(row.ratio == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(r.max_bf_deviation < 0.02);
  }
  SUBCASE("identical mixings") {
    const InvarianceReport r = smn_bf_invariance_demo(spec, {data[0], data[1]}, normal_mixing(), normal_mixing());
    for (double bf : r.bayes_factors) CHECK(bf == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("two Student-t mixings over three datasets") {
    const InvarianceReport r = smn_bf_invariance_demo(spec, data, student(2.0), student(4.0));
    CHECK_FALSE(r.incomplete);
    CHECK(r.max_ratio_deviation < 0.01);
    CHECK(r.max_bf_deviation < 0.02);
    for (double bf : r.bayes_factors) CHECK(bf == doctest::Approx(r.expected_bayes_factor).epsilon(0.02));
  }
  SUBCASE("configuration checks") {
    CHECK_THROWS_AS(smn_bf_invariance_demo(d1(power_exp({"0", "-1/2"}, {"0", "1"}), NormalEffects{}), data,
                                           student(2.0), normal_mixing()),
                    ConfigError);
    CHECK_THROWS_AS(smn_bf_invariance_demo(d1(HalfCauchyPrior{Hyper::of(0.0), {1.0}}, NormalEffects{}), data,
                                           student(2.0), normal_mixing()),
                    ConfigError);
  }
}
