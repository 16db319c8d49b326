#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "flexlmm/diagnostics.hpp"
#include "flexlmm/distributions.hpp"
#include "flexlmm/gaussian.hpp"
#include "flexlmm/oracle.hpp"
#include "flexlmm/propriety.hpp"
#include "flexlmm/quadrature.hpp"
#include "flexlmm/sampler.hpp"
#include "flexlmm/selection.hpp"

using namespace flexlmm;

namespace {

std::shared_ptr<const SkewParameterisation> eps() { return default_registry().get("epsilon_skew"); }
std::shared_ptr<const SkewParameterisation> inv() { return default_registry().get("inverse_scale_factors"); }

PowerExpPrior power_exp(std::vector<std::string> a, std::vector<std::string> b) {
  PowerExpPrior p;
  for (const auto& s : a) p.a.push_back(Hyper::parse(s));
  for (const auto& s : b) p.b.push_back(Hyper::parse(s));
  return p;
}

HalfCauchyPrior half_cauchy(const std::string& a0, std::vector<double> s) { return HalfCauchyPrior{Hyper::parse(a0), std::move(s)}; }

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

const Eigen::VectorXd y6 = vec({1.2, 0.7, -0.4, 0.1, 2.3, 1.6});

// n = 6, intercept, one factor with three groups of two.
ModelSpec one_way(PriorStructure prior, RandomEffects re) {
  auto [X, Z] = one_way_design(3, 2);
  return ModelSpec(X, Z, {3}, std::move(re), std::move(prior));
}

// n = 6, intercept, two single-column factors.
ModelSpec two_factor(PriorStructure prior, RandomEffects re) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(6, 1);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(6, 2);
  Z.block(0, 0, 3, 1).setOnes();
  Z.block(3, 1, 3, 1).setOnes();
  return ModelSpec(X, Z, {1, 1}, std::move(re), std::move(prior));
}

// n = 4, intercept, one factor with two groups of two.
ModelSpec small_two(PriorStructure prior, RandomEffects re) {
  auto [X, Z] = one_way_design(2, 2);
  return ModelSpec(X, Z, {2}, std::move(re), std::move(prior));
}

// n = 5, intercept, one random slope.
ModelSpec slope(PriorStructure prior, RandomEffects re) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
  Eigen::MatrixXd Z(5, 1);
  Z << -1.0, -0.5, 0.2, 1.1, 2.0;
  return ModelSpec(X, Z, {1}, std::move(re), std::move(prior));
}

struct Instance {
  std::string name;
  ModelSpec spec;
  Eigen::VectorXd y;
};

std::vector<Instance> suite() {
  const TpnEffects eps_uniform{eps(), {ShapePrior::uniform(-1, 1)}};
  const TpnEffects inv_point{inv(), {ShapePrior::point_mass(1.5)}};
  const FsnEffects skew_normal{fsn_family_by_name("skew_normal"), {ShapePrior::truncated_normal(0, 2, -quad::kInf, quad::kInf)}};
  const FsnEffects fsn_uniform{fsn_family_by_name("uniform"), {ShapePrior::uniform(-1, 1)}};
  const TpnEffects two_points{eps(), {ShapePrior::point_mass(0.3), ShapePrior::point_mass(-0.2)}};
  const Eigen::VectorXd y4 = vec({0.4, -0.3, 1.9, 1.1});
  const Eigen::VectorXd y5 = vec({-0.8, 0.3, 0.1, 1.7, 2.9});
  std::vector<Instance> s;
  s.push_back({"tpn one-way standard diffuse", one_way(standard_diffuse_prior(1), eps_uniform), y6});
  s.push_back({"tpn one-way flat sigma_1", one_way(power_exp({"0", "0"}, {"0", "0"}), eps_uniform), y6});
  s.push_back({"tpn one-way inverse gamma", one_way(power_exp({"0", "1"}, {"0", "1"}), eps_uniform), y6});
  s.push_back({"tpn one-way flat sigma_0", one_way(power_exp({"-1", "-0.5"}, {"0", "0"}), inv_point), y6});
  s.push_back({"tpn n=4 inverse scale", small_two(standard_diffuse_prior(1), inv_point), y4});
  s.push_back({"tpn two factors", two_factor(power_exp({"0", "1", "1"}, {"0", "1", "1"}), two_points), y6});
  s.push_back({"tpn two factors flat sigma_2", two_factor(power_exp({"0", "1", "0"}, {"0", "1", "0"}), two_points), y6});
  s.push_back({"fsn skew-normal standard diffuse", one_way(standard_diffuse_prior(1), skew_normal), y6});
  s.push_back({"fsn uniform flat sigma_1", one_way(power_exp({"0", "0"}, {"0", "0"}), fsn_uniform), y6});
  s.push_back({"fsn slope inverse gamma", slope(power_exp({"0", "1"}, {"0", "1"}), skew_normal), y5});
  s.push_back({"half-Cauchy normal", one_way(half_cauchy("0", {1.0}), NormalEffects{}), y6});
  s.push_back({"half-Cauchy tpn slope", slope(half_cauchy("0", {2.0}), inv_point), y5});
  return s;
}

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void criterion1(const std::vector<Instance>& instances) {
  const auto t0 = std::chrono::steady_clock::now();
  int proper = 0;
  int improper = 0;
  int disagreements = 0;
  int unscored = 0;
  bool cases[3] = {false, false, false};
  for (const auto& in : instances) {
    const auto v = check_propriety(in.spec, in.y);
    const auto p = propriety_probe(in.spec, in.y);
    // Theorem 2 and Corollary 1 are sufficient-only; UNDETERMINED carries no claim to test.
    bool agree = true;
    if (v.overall == Verdict::Proper) {
      ++proper;
      agree = p.outcome == ProbeOutcome::Converges;
    } else if (v.overall == Verdict::Improper) {
      ++improper;
      agree = p.outcome == ProbeOutcome::Diverges;
    } else {
      ++unscored;
    }
    if (v.theorem_case == TheoremCase::Theorem2) cases[1] = true;
    else if (v.theorem_case == TheoremCase::Corollary1) cases[2] = true;
    else cases[0] = true;
    if (!agree) ++disagreements;
    std::printf("  %-34s %-12s %-12s %s\n", in.name.c_str(), to_string(v.overall).c_str(), to_string(p.outcome).c_str(),
                to_string(v.theorem_case).c_str());
  }
  const double secs = seconds_since(t0);
  const bool pass = proper + improper >= 10 && proper > 0 && improper > 0 && cases[0] && cases[1] && cases[2] &&
                    disagreements == 0 && secs < 600.0;
  report(1, pass,
         fmt("%.0f scored instances (%.0f unscored), %.0f disagreements, ", proper + improper, unscored, disagreements) +
             fmt("%.0f PROPER / %.0f IMPROPER, ", proper, improper) + fmt("%.1f s (limit 600 s)", secs));
}

void criterion2() {
  const TpnEffects re{eps(), {ShapePrior::uniform(-1, 1)}};
  const ModelSpec diffuse = one_way(standard_diffuse_prior(1), re);
  const ModelSpec flipped = one_way(power_exp({"0", "0"}, {"0", "0"}), re);
  const auto v1 = check_propriety(diffuse, y6);
  const auto v2 = check_propriety(flipped, y6);
  const auto p1 = propriety_probe(diffuse, y6);
  const auto p2 = propriety_probe(flipped, y6);
  const bool pass = v1.overall == Verdict::Proper && v2.overall == Verdict::Improper &&
                    v2.conditions.at("a").status == ConditionStatus::Fails && p1.outcome == ProbeOutcome::Converges &&
                    p2.outcome == ProbeOutcome::Diverges;
  report(2, pass,
         "diffuse " + to_string(v1.overall) + "/" + to_string(p1.outcome) + ", flipped " + to_string(v2.overall) +
             " (a " + to_string(v2.conditions.at("a").status) + ")/" + to_string(p2.outcome));
}

void criterion3() {
  const double e = condition_e_integral(-0.5, *eps(), ShapePrior::uniform(-1, 1));
  const double d = condition_d_integral(2, -0.5, *eps(), ShapePrior::uniform(-1, 1));
  const bool pass = std::abs(e - 0.5) <= 1e-12 && std::abs(d - 0.125) <= 1e-8;
  report(3, pass, fmt("|e - 0.5| = %.2e (tol 1e-12), |d - 0.125| = %.2e (tol 1e-8)", std::abs(e - 0.5), std::abs(d - 0.125)));
}

double normal(double x, double mu, double sigma) { return std::exp(log_norm_pdf((x - mu) / sigma)) / sigma; }

void criterion4() {
  const auto sn = fsn_family_by_name("skew_normal");
  const auto un = fsn_family_by_name("uniform");
  const auto point = mixing_by_name("point_mass");
  const auto gamma = mixing_by_name("gamma");
  double max_reduction = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double x = -8.0 + 16.0 * i / 1000.0;
    const double ref = normal(x, 0.3, 1.7);
    const double c = x - 0.3;
    max_reduction = std::max(max_reduction, std::abs(tpn_pdf(x, 0.3, 1.7, 0.0, *eps()) - ref));
    max_reduction = std::max(max_reduction, std::abs(tpn_pdf(x, 0.3, 1.7, 1.0, *inv()) - ref));
    max_reduction = std::max(max_reduction, std::abs(fsn_pdf(x, 0.3, 1.7, 1.3, *un) - ref));
    max_reduction = std::max(max_reduction, std::abs(smn_pdf(std::span<const double>(&c, 1), 1.7, *point, 1.0) - ref));
  }
  const quad::Options o{1e-13, 1e-11, 4000};
  auto mass = [&](const std::function<double(double)>& f) {
    return quad::integrate(f, -quad::kInf, 0.3, o).value + quad::integrate(f, 0.3, quad::kInf, o).value;
  };
  std::vector<std::function<double(double)>> densities;
  for (double g : {-0.6, 0.0, 0.5}) densities.push_back([g](double x) { return tpn_pdf(x, 0.3, 1.7, g, *eps()); });
  for (double g : {0.5, 2.0}) densities.push_back([g](double x) { return tpn_pdf(x, 0.3, 1.7, g, *inv()); });
  for (double l : {-2.0, 0.0, 0.7}) densities.push_back([sn, l](double x) { return fsn_pdf(x, 0.3, 1.7, l, *sn); });
  densities.push_back([un](double x) { return fsn_pdf(x, 0.3, 1.7, 0.0, *un); });
  for (double d : {1.0, 3.0}) {
    densities.push_back([gamma, d](double x) {
      const double c = x - 0.3;
      return smn_pdf(std::span<const double>(&c, 1), 1.7, *gamma, d);
    });
  }
  double max_norm = 0.0;
  for (const auto& f : densities) max_norm = std::max(max_norm, std::abs(mass(f) - 1.0));
  report(4, max_reduction < 1e-12 && max_norm < 1e-8,
         fmt("max reduction gap %.2e (tol 1e-12), max |mass - 1| %.2e over %.0f densities (tol 1e-8)", max_reduction,
             max_norm, static_cast<double>(densities.size())));
}

void criterion5(const std::vector<Instance>& instances) {
  int checked = 0;
  int violations = 0;
  for (const auto& in : instances) {
    if (std::holds_alternative<SmnEffects>(in.spec.effects())) continue;
    for (double k : {2.0, 8.0}) {
      const auto b = bounding_integrals(in.spec, in.y, Truncation{k});
      const auto m = marginal_truncated(in.spec, in.y, Truncation{k});
      const double slack = 1e-9;
      ++checked;
      if (!(b.log_lower <= m.log_value + slack && m.log_value <= b.log_upper + slack &&
            m.log_value <= b.log_upper_max + slack && std::abs(b.log_value - m.log_value) <= slack)) {
        ++violations;
        std::printf("  %s k=%g: %g <= %g <= %g / %g\n", in.name.c_str(), k, b.log_lower, m.log_value, b.log_upper,
                    b.log_upper_max);
      }
    }
  }
  report(5, checked > 0 && violations == 0,
         fmt("%.0f instance/box pairs, %.0f violations (log-scale slack 1e-9)", checked, violations));
}

Eigen::VectorXd simulate(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(6);
  for (int g = 0; g < 3; ++g) {
    const double u = 0.8 * z(rng);
    for (int j = 0; j < 2; ++j) y(2 * g + j) = 1.0 + u + 0.5 * z(rng);
  }
  return y;
}

void criterion6() {
  const ModelSpec spec = one_way(standard_diffuse_prior(1), NormalEffects{});
  const SmnEffects t2{mixing_by_name("gamma"), ShapePrior::point_mass(2.0)};
  const SmnEffects normal{mixing_by_name("point_mass"), ShapePrior::point_mass(1.0)};
  const auto rep = smn_bf_invariance_demo(spec, {simulate(101), simulate(202)}, t2, normal);
  const double expected = std::tgamma(1.5);
  double worst = 0.0;
  for (const auto& row : rep.rows) {
    if (row.mixing == rep.mixings.front()) worst = std::max(worst, std::abs(row.ratio / expected - 1.0));
  }
  const bool pass = !rep.incomplete && rep.rows.size() >= 2 && worst < 0.01 && rep.max_bf_deviation < 0.02;
  report(6, pass, fmt("max |ratio / %.6f - 1| = %.2e (tol 1e-2), BF spread %.2e (tol 2e-2)", expected, worst,
                      rep.max_bf_deviation));
}

void criterion7() {
  const ModelSpec normal = one_way(standard_diffuse_prior(1), NormalEffects{});
  const std::vector<double> scales = {0.8, 1.1};
  SamplerOptions o;
  o.iterations = 12000;
  o.burn_in = 2000;
  o.seed = 42;
  o.fixed_scales = scales;
  const ChainOutput ch = mwg_sample(normal, y6, o);
  const auto [mean, cov] = conjugate_beta_posterior(normal, y6, scales);
  const Eigen::VectorXd b = ch.column("beta_1");
  const double z_mean = std::abs(b.mean() - mean(0)) / mc_standard_error(as_span(b));
  const Eigen::VectorXd sq = (b.array() - mean(0)).square();
  const double z_var = std::abs(sq.mean() - cov(0, 0)) / mc_standard_error(as_span(sq));
  const bool conj = b.size() == 10000 && z_mean < 3.0 && z_var < 3.0;

  const auto prior = power_exp({"0", "1"}, {"0", "1"});
  SamplerOptions s;
  s.iterations = 22000;
  s.burn_in = 2000;
  s.seed = 21;
  const ChainOutput cn = mwg_sample(one_way(prior, NormalEffects{}), y6, s);
  s.seed = 22;
  const ChainOutput ct = mwg_sample(one_way(prior, TpnEffects{eps(), {ShapePrior::point_mass(0.0)}}), y6, s);
  const Eigen::VectorXd bn = cn.column("beta_1");
  const Eigen::VectorXd bt = ct.column("beta_1");
  const double ess = std::min(effective_sample_size(as_span(bn)), effective_sample_size(as_span(bt)));
  const auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(bn.size()) / ess));
  const double ks_p = ks_two_sample(thin(as_span(bn), k), thin(as_span(bt), k)).p_value;

  SamplerOptions r;
  r.iterations = 3000;
  r.burn_in = 500;
  r.seed = 9;
  const ModelSpec tpn = one_way(standard_diffuse_prior(1), TpnEffects{eps(), {ShapePrior::uniform(-1, 1)}});
  const auto c1 = sample_chains(tpn, y6, r, 2);
  const auto c2 = sample_chains(tpn, y6, r, 2);
  bool bitwise = true;
  for (std::size_t c = 0; c < c1.size(); ++c) {
    bitwise = bitwise && c1[c].draws.size() == c2[c].draws.size() &&
              std::memcmp(c1[c].draws.data(), c2[c].draws.data(), sizeof(double) * c1[c].draws.size()) == 0;
  }
  report(7, conj && ks_p > 0.01 && bitwise,
         fmt("conjugate |z| mean %.2f var %.2f (tol 3), ", z_mean, z_var) + fmt("KS p = %.3f (tol > 0.01), ", ks_p) +
             (bitwise ? "bitwise reproducible" : "not reproducible"));
}

void criterion8() {
  struct Case {
    const char* name;
    ShapePrior prior;
    double gamma0;
  };
  const Case cases[] = {
      {"uniform(-1, 1)", ShapePrior::uniform(-1, 1), 0.0},
      {"truncated normal", ShapePrior::truncated_normal(0.2, 0.4, -1, 1), 0.0},
      {"gamma(3, 2)", ShapePrior::gamma(3, 2), 1.0},
  };
  double worst = 0.0;
  bool pass = true;
  for (std::size_t i = 0; i < std::size(cases); ++i) {
    const ChainOutput ch = prior_only_chain(cases[i].prior, 40000, 1000 + i);
    const auto r = savage_dickey(ch, cases[i].prior, cases[i].gamma0);
    const double z = std::abs(r.bf - 1.0) / r.se;
    worst = std::max(worst, z);
    pass = pass && z < 3.0 && r.warnings.empty();
  }
  report(8, pass, fmt("worst |BF - 1| / SE = %.2f over %.0f priors (tol 3)", worst, static_cast<double>(std::size(cases))));
}

void criterion9() {
  ProbitSpec spec;
  spec.group_counts = {{2, 3}, {1, 4}, {3, 2}, {4, 1}, {2, 2}};
  spec.a1 = Hyper::parse("-1");
  spec.effects = TpnEffects{eps(), {ShapePrior::uniform(-1, 1)}};
  const Verdict v1 = check_probit(spec).overall;
  spec.a1 = Hyper::parse("1/2");
  const Verdict v2 = check_probit(spec).overall;
  report(9, v1 == Verdict::Proper && v2 == Verdict::Undetermined,
         "a1 = -1: " + to_string(v1) + ", a1 = 1/2: " + to_string(v2));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Instance> instances = suite();
  criterion1(instances);
  criterion2();
  criterion3();
  criterion4();
  criterion5(instances);
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  std::printf("%d of 9 criteria failed, %.1f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
