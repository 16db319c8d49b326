#include "flexlmm/propriety.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "flexlmm/errors.hpp"
#include "flexlmm/quadrature.hpp"

namespace flexlmm {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Proper:
      return "PROPER";
    case Verdict::Improper:
      return "IMPROPER";
    case Verdict::Undetermined:
      return "UNDETERMINED";
  }
  return "?";
}

std::string to_string(TheoremCase c) {
  switch (c) {
    case TheoremCase::Case1:
      return "Case1";
    case TheoremCase::Case2:
      return "Case2";
    case TheoremCase::Theorem2:
      return "Theorem2";
    case TheoremCase::Corollary1:
      return "Corollary1";
    case TheoremCase::ProbitRemark:
      return "ProbitRemark";
  }
  return "?";
}

std::string to_string(ConditionStatus s) {
  switch (s) {
    case ConditionStatus::Holds:
      return "holds";
    case ConditionStatus::Fails:
      return "fails";
    case ConditionStatus::NotApplicable:
      return "not-applicable";
  }
  return "?";
}

std::string to_string(ConditionRole r) {
  switch (r) {
    case ConditionRole::Necessary:
      return "necessary";
    case ConditionRole::Sufficient:
      return "sufficient";
    case ConditionRole::Both:
      return "necessary+sufficient";
    case ConditionRole::Informational:
      return "informational";
  }
  return "?";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// E_pi[exp(log_g(a(gamma), b(gamma)))], integrated over z = to_z(gamma).
double shape_expectation(const SkewParameterisation& param, const ShapePrior& prior,
                         const std::function<double(double, double)>& log_g) {
  require_support_within(prior, param.gamma_lo, param.gamma_hi, "condition integral");
  if (prior.is_point_mass()) {
    const double g = prior.point();
    return std::exp(log_g(param.a(g), param.b(g)));
  }
  const double lo = std::max(prior.lower(), param.gamma_lo);
  const double hi = std::min(prior.upper(), param.gamma_hi);
  const double z_lo = lo <= param.gamma_lo ? -kInf : param.to_z(lo);
  const double z_hi = hi >= param.gamma_hi ? kInf : param.to_z(hi);
  auto log_f = [&](double z) {
    const double lp = prior.log_pdf(param.from_z(z));
    if (lp == -kInf) return -kInf;
    const auto [a, b] = param.ab_of_z(z);
    return lp + param.log_jacobian(z) + log_g(a, b);
  };
  quad::ExpandingOptions opts;
  opts.inner = {1e-14, 1e-11, 4000};
  return quad::integrate_expanding(log_f, z_lo, z_hi, opts).value;
}

double pow_log(double exponent, double x) { return exponent == 0.0 ? 0.0 : exponent * std::log(x); }

const PowerExpPrior& power_exp_or_throw(const ModelSpec& spec, const std::string& who) {
  const auto* pe = std::get_if<PowerExpPrior>(&spec.prior());
  if (!pe) throw ConfigError(who + " needs the power-exponential prior structure");
  return *pe;
}

ConditionResult make(bool holds, ConditionRole role, std::map<std::string, double> evidence = {},
                     std::string note = {}) {
  ConditionResult c;
  c.status = holds ? ConditionStatus::Holds : ConditionStatus::Fails;
  c.role = role;
  c.evidence = std::move(evidence);
  c.note = std::move(note);
  return c;
}

void fill_design(ProprietyVerdict& v, const ModelSpec& spec) {
  v.design = {{"n", double(spec.n())}, {"p", double(spec.p())}, {"q", double(spec.q())},
              {"r", double(spec.r())}, {"t", double(spec.t())}, {"rank_xz", double(spec.rank_xz())}};
}

void set_guard(ProprietyVerdict& v, const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y, double b0) {
  if (!y) return;
  spec.check_response(*y);
  const double s = sse(*y, spec.X());
  v.design["sse"] = s;
  // SSE at rounding level counts as zero.
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, y->squaredNorm());
  v.sample_guard = 2.0 * b0 + (s > floor ? s : 0.0) > 0.0;
  if (!*v.sample_guard) v.notes.push_back("2 b_0 + SSE = 0: the data fall outside the almost-sure set");
}

bool is_necessary(ConditionRole r) { return r == ConditionRole::Necessary || r == ConditionRole::Both; }
bool is_sufficient(ConditionRole r) { return r == ConditionRole::Sufficient || r == ConditionRole::Both; }

Verdict classify(const std::map<std::string, ConditionResult>& conditions) {
  for (const auto& [k, c] : conditions) {
    if (is_necessary(c.role) && c.status == ConditionStatus::Fails) return Verdict::Improper;
  }
  for (const auto& [k, c] : conditions) {
    if (is_sufficient(c.role) && c.status == ConditionStatus::Fails) return Verdict::Undetermined;
  }
  return Verdict::Proper;
}

// Conditions (a), (b1), (b2), (c1), (c2), shared by both theorems.
void scale_conditions(const ModelSpec& spec, const PowerExpPrior& pr, std::map<std::string, ConditionResult>& out) {
  const std::size_t r = spec.r();
  const long q = static_cast<long>(spec.q());
  const long t = static_cast<long>(spec.t());

  bool a_ok = true;
  double a_first_fail = 0.0;
  for (std::size_t i = 1; i <= r; ++i) {
    const bool ok = (pr.a[i].exact < pr.b[i].exact && pr.b[i].exact == 0) || pr.b[i].exact > 0;
    if (!ok && a_ok) a_first_fail = double(i);
    a_ok = a_ok && ok;
  }
  std::map<std::string, double> a_ev;
  if (!a_ok) a_ev["first_failing_factor"] = a_first_fail;
  out["a"] = make(a_ok, ConditionRole::Informational, a_ev);

  Rational b1_min;
  Rational b2_min;
  for (std::size_t i = 1; i <= r; ++i) {
    const Rational v = Rational(static_cast<long>(spec.factor_sizes()[i - 1])) + 2 * pr.a[i].exact;
    const Rational w = v - Rational(q - t);
    if (i == 1 || v < b1_min) b1_min = v;
    if (i == 1 || w < b2_min) b2_min = w;
  }
  out["b1"] = make(b1_min > 0, ConditionRole::Informational, {{"min_qi_plus_2ai", to_double(b1_min)}});
  out["b2"] = make(b2_min > 0, ConditionRole::Informational,
                   {{"min_margin", to_double(b2_min)}, {"q_minus_t", double(q - t)}});

  const Rational base = Rational(static_cast<long>(spec.n()) - static_cast<long>(spec.p()));
  Rational c1 = base;
  Rational c2 = base + 2 * pr.a[0].exact;
  for (std::size_t i = 0; i <= r; ++i) c1 += 2 * pr.a[i].exact;
  for (std::size_t i = 1; i <= r; ++i) c2 += 2 * std::min(pr.a[i].exact, Rational(0));
  out["c1"] = make(c1 > 0, ConditionRole::Informational, {{"value", to_double(c1)}});
  out["c2"] = make(c2 > 0, ConditionRole::Informational, {{"value", to_double(c2)}});
}

}  // namespace

double condition_d_integral(std::size_t q_i, double a_i, const SkewParameterisation& param, const ShapePrior& prior) {
  const double e_h = static_cast<double>(q_i) + 2.0 * a_i;
  const double e_H = -static_cast<double>(q_i);
  if (e_h == 0.0 && param.constant_H && !prior.is_point_mass()) {
    require_support_within(prior, param.gamma_lo, param.gamma_hi, "condition integral");
    return std::pow(*param.constant_H, e_H);
  }
  return shape_expectation(param, prior,
                           [=](double a, double b) { return pow_log(e_h, std::min(a, b)) + pow_log(e_H, a + b); });
}

double condition_e_integral(double a_i, const SkewParameterisation& param, const ShapePrior& prior, bool use_max) {
  const double e = 2.0 * a_i;
  if (!use_max && param.constant_H && !prior.is_point_mass()) {
    require_support_within(prior, param.gamma_lo, param.gamma_hi, "condition integral");
    return std::pow(*param.constant_H, e);
  }
  return shape_expectation(param, prior, [=](double a, double b) {
    return pow_log(e, use_max ? std::max(a, b) : a + b);
  });
}

ProprietyVerdict check_theorem1(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y) {
  const auto& pr = power_exp_or_throw(spec, "Theorem 1 check");
  const auto* tpn = std::get_if<TpnEffects>(&spec.effects());
  const bool normal = std::holds_alternative<NormalEffects>(spec.effects());
  if (!tpn && !normal) throw ConfigError("Theorem 1 check needs two-piece normal (or normal) random effects");

  ProprietyVerdict v;
  fill_design(v, spec);
  scale_conditions(spec, pr, v.conditions);

  if (tpn) {
    bool d_ok = true;
    bool e_ok = true;
    std::map<std::string, double> d_ev;
    std::map<std::string, double> e_ev;
    for (std::size_t i = 1; i <= spec.r(); ++i) {
      const double d = condition_d_integral(spec.factor_sizes()[i - 1], pr.a[i].value, *tpn->param,
                                            tpn->shape_priors[i - 1]);
      const double e = condition_e_integral(pr.a[i].value, *tpn->param, tpn->shape_priors[i - 1]);
      d_ev["integral_" + std::to_string(i)] = d;
      e_ev["integral_" + std::to_string(i)] = e;
      d_ok = d_ok && std::isfinite(d);
      e_ok = e_ok && std::isfinite(e);
    }
    v.conditions["d"] = make(d_ok, ConditionRole::Informational, d_ev);
    v.conditions["e"] = make(e_ok, ConditionRole::Informational, e_ev);
  } else {
    ConditionResult na;
    na.note = "normal random effects: no skewness parameter";
    v.conditions["d"] = na;
    v.conditions["e"] = na;
  }

  const bool case1 = spec.t() == spec.q() || spec.r() == 1;
  v.theorem_case = case1 ? TheoremCase::Case1 : TheoremCase::Case2;
  auto role = [&](const std::string& k, ConditionRole r) { v.conditions[k].role = r; };
  role("a", ConditionRole::Both);
  role("c1", ConditionRole::Necessary);
  role("d", ConditionRole::Necessary);
  role("c2", ConditionRole::Sufficient);
  role("e", ConditionRole::Sufficient);
  if (case1) {
    role("b2", ConditionRole::Both);
    role("b1", ConditionRole::Informational);
  } else {
    role("b1", ConditionRole::Necessary);
    role("b2", ConditionRole::Sufficient);
  }
  v.overall = classify(v.conditions);
  set_guard(v, spec, y, pr.b[0].value);
  return v;
}

ProprietyVerdict check_theorem2(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y) {
  const auto& pr = power_exp_or_throw(spec, "Theorem 2 check");
  const auto* fsn = std::get_if<FsnEffects>(&spec.effects());
  if (!fsn) throw ConfigError("Theorem 2 check needs FSN random effects");
  if (!fsn->family->sup_bound) {
    throw InapplicableError("Theorem 2 is inapplicable: FSN family '" + fsn->family->name +
                            "' has no finite upper bound on p");
  }

  ProprietyVerdict v;
  v.theorem_case = TheoremCase::Theorem2;
  fill_design(v, spec);
  std::map<std::string, ConditionResult> all;
  scale_conditions(spec, pr, all);
  for (const char* k : {"a", "b2", "c2"}) {
    v.conditions[k] = all[k];
    v.conditions[k].role = ConditionRole::Sufficient;
  }
  v.conditions["a"].evidence["sup_bound"] = *fsn->family->sup_bound;
  v.overall = classify(v.conditions);
  v.notes.push_back("sufficient conditions only: a failure leaves the verdict undetermined");
  set_guard(v, spec, y, pr.b[0].value);
  return v;
}

ProprietyVerdict check_corollary1(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y) {
  const auto* hc = std::get_if<HalfCauchyPrior>(&spec.prior());
  if (!hc) throw ConfigError("Corollary 1 check needs the half-Cauchy prior structure");

  ProprietyVerdict v;
  v.theorem_case = TheoremCase::Corollary1;
  fill_design(v, spec);
  v.conditions["hc_a"] = make(hc->a0.exact >= 0, ConditionRole::Sufficient, {{"a0", hc->a0.value}});
  v.conditions["hc_b"] = make(spec.rank_xz() < spec.n(), ConditionRole::Sufficient,
                              {{"rank_xz", double(spec.rank_xz())}, {"n", double(spec.n())}});
  v.overall = classify(v.conditions);
  if (!std::holds_alternative<TpnEffects>(spec.effects())) {
    v.notes.push_back("effects family '" + family_name(spec.effects()) +
                      "' with proper parameter priors: same two conditions apply");
  }
  v.notes.push_back("sufficient conditions only: a failure leaves the verdict undetermined");
  set_guard(v, spec, y, 0.0);
  return v;
}

ProprietyVerdict check_probit(const ProbitSpec& spec) {
  ProprietyVerdict v;
  v.theorem_case = TheoremCase::ProbitRemark;
  long r1 = 0;
  for (const auto& [succ, fail] : spec.group_counts) {
    if (succ < 0 || fail < 0) throw DomainError("probit group counts must be nonnegative");
    if (succ >= 1 && fail >= 1) ++r1;
  }
  const long r = static_cast<long>(spec.group_counts.size());
  v.design = {{"r", double(r)}, {"r1", double(r1)}};

  v.conditions["probit_i"] = make(r1 >= 2, ConditionRole::Sufficient, {{"r1", double(r1)}},
                                  "r1 counts every group with at least one success and one failure");
  const Rational lower = -Rational(r1 - 1, 2);
  const bool ii = spec.a1.exact > lower && spec.a1.exact < 0;
  v.conditions["probit_ii"] =
      make(ii, ConditionRole::Sufficient, {{"a1", spec.a1.value}, {"lower", to_double(lower)}, {"upper", 0.0}});

  if (const auto* tpn = std::get_if<TpnEffects>(&spec.effects)) {
    if (!tpn->param || tpn->shape_priors.size() != 1) throw ConfigError("probit TPN effects need one gamma prior");
    const double e = condition_e_integral(spec.a1.value, *tpn->param, tpn->shape_priors[0]);
    v.conditions["probit_iii"] = make(std::isfinite(e), ConditionRole::Sufficient, {{"integral", e}});
  } else {
    const auto& fsn = std::get<FsnEffects>(spec.effects);
    if (!fsn.family || fsn.shape_priors.size() != 1) throw ConfigError("probit FSN effects need one lambda prior");
    if (!fsn.family->sup_bound) {
      throw InapplicableError("probit remark for FSN effects needs p to be upper bounded; '" + fsn.family->name +
                              "' is not");
    }
    ConditionResult na;
    na.role = ConditionRole::Sufficient;
    na.note = "bounded p: conditions (i) and (ii) suffice";
    v.conditions["probit_iii"] = na;
  }
  v.overall = classify(v.conditions);
  if (r1 < 2) v.notes.push_back("fewer than two groups have both a success and a failure");
  v.notes.push_back("sufficient conditions only: a failure leaves the verdict undetermined");
  return v;
}

ProprietyVerdict check_propriety(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y) {
  if (std::holds_alternative<HalfCauchyPrior>(spec.prior())) return check_corollary1(spec, y);
  if (std::holds_alternative<FsnEffects>(spec.effects())) return check_theorem2(spec, y);
  if (std::holds_alternative<SmnEffects>(spec.effects())) {
    throw ConfigError("no propriety result covers scale-mixture effects under the power-exponential prior; "
                      "use the half-Cauchy structure or the oracle probe");
  }
  return check_theorem1(spec, y);
}

}  // namespace flexlmm
