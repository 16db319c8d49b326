#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flexlmm/model.hpp"

namespace flexlmm {

enum class Verdict { Proper, Improper, Undetermined };
enum class TheoremCase { Case1, Case2, Theorem2, Corollary1, ProbitRemark };
enum class ConditionStatus { Holds, Fails, NotApplicable };
/// How a condition enters the verdict under the selected case.
enum class ConditionRole { Necessary, Sufficient, Both, Informational };

std::string to_string(Verdict v);
std::string to_string(TheoremCase c);
std::string to_string(ConditionStatus s);
std::string to_string(ConditionRole r);

struct ConditionResult {
  ConditionStatus status = ConditionStatus::NotApplicable;
  ConditionRole role = ConditionRole::Informational;
  /// Numeric evidence: margins, ranks, integral values (+inf for divergent integrals).
  std::map<std::string, double> evidence;
  std::string note;
};

struct ProprietyVerdict {
  TheoremCase theorem_case = TheoremCase::Case1;
  /// Keyed by a, b1, b2, c1, c2, d, e, hc_a, hc_b, probit_i, probit_ii, probit_iii.
  std::map<std::string, ConditionResult> conditions;
  Verdict overall = Verdict::Undetermined;
  /// 2 b_0 + SSE > 0, when data were supplied.
  std::optional<bool> sample_guard;
  std::map<std::string, double> design;  // n, p, q, r, t, rank_xz, ...
  std::vector<std::string> notes;
};

/// Value of a condition integral; +inf when the expanding truncations keep growing.
double condition_d_integral(std::size_t q_i, double a_i, const SkewParameterisation& param, const ShapePrior& prior);
double condition_e_integral(double a_i, const SkewParameterisation& param, const ShapePrior& prior,
                            bool use_max = false);

/// Two-piece normal (or normal) effects under the power-exponential prior.
ProprietyVerdict check_theorem1(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y = std::nullopt);
/// FSN effects with bounded p under the power-exponential prior.
ProprietyVerdict check_theorem2(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y = std::nullopt);
/// Half-Cauchy structure, any effects family with proper shape priors.
ProprietyVerdict check_corollary1(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y = std::nullopt);
ProprietyVerdict check_probit(const ProbitSpec& spec);

/// Picks the applicable result from the family and prior structure.
ProprietyVerdict check_propriety(const ModelSpec& spec, const std::optional<Eigen::VectorXd>& y = std::nullopt);

}  // namespace flexlmm
