#include <doctest.h>

#include <random>

#include "flexlmm/errors.hpp"
#include "flexlmm/model.hpp"

using namespace flexlmm;

namespace {

// Rank by modified Gram-Schmidt with re-orthogonalisation, after projecting out col(X).
std::size_t gram_schmidt_rank(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
  std::vector<Eigen::VectorXd> basis;
  auto add = [&](Eigen::VectorXd v, bool count) {
    const double norm0 = v.norm();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) v -= b.dot(v) * b;
    if (v.norm() > 1e-9 * std::max(1.0, norm0)) {
      basis.push_back(v.normalized());
      return count;
    }
    return false;
  };
  for (Eigen::Index j = 0; j < X.cols(); ++j) add(X.col(j), false);
  std::size_t rank = 0;
  for (Eigen::Index j = 0; j < Z.cols(); ++j) rank += add(Z.col(j), true) ? 1 : 0;
  return rank;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

}  // namespace

TEST_CASE("effective rank t examples") {
  auto [X, Z] = one_way_design(3, 2);
  CHECK(effective_rank_t(X, Z) == 2);
  CHECK(gram_schmidt_rank(X, Z) == 2);
  // Columns inside col(X).
  Eigen::MatrixXd Zin(6, 2);
  Zin << X, 3.0 * X;
  CHECK(effective_rank_t(X, Zin) == 0);
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd Xr = random_matrix(rng, 6, 2);
  CHECK(effective_rank_t(Xr, Eigen::MatrixXd::Identity(6, 6)) == 4);
  CHECK(gram_schmidt_rank(Xr, Eigen::MatrixXd::Identity(6, 6)) == 4);
  CHECK_THROWS_AS(effective_rank_t(Xr, Eigen::MatrixXd::Identity(5, 5)), DimensionError);
}

TEST_CASE("effective rank t properties on random designs") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = dim(rng);
    const int n = p + dim(rng);
    const int q = dim(rng);
    const Eigen::MatrixXd X = random_matrix(rng, n, p);
    Eigen::MatrixXd Z = random_matrix(rng, n, q);
    if (trial % 3 == 0 && q > 1) Z.col(0) = Z.col(1) + X.col(0);  // induce a dependence modulo col(X)
    const std::size_t t = effective_rank_t(X, Z);
    CHECK(t <= std::min<std::size_t>(q, n - p));
    CHECK(t == gram_schmidt_rank(X, Z));
    const Eigen::MatrixXd A = random_matrix(rng, p, p) + 3.0 * Eigen::MatrixXd::Identity(p, p);
    CHECK(effective_rank_t(X * A, Z) == t);
  }
}

TEST_CASE("sse") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  CHECK(sse(y, X) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(sse(X * 4.2, X) == doctest::Approx(0.0).scale(1.0).epsilon(1e-20));
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd Xr = random_matrix(rng, 7, 3);
    const Eigen::VectorXd yr = random_matrix(rng, 7, 1);
    const Eigen::VectorXd c = random_matrix(rng, 3, 1);
    const double s = sse(yr, Xr);
    CHECK(s > 0.0);
    CHECK(sse(yr + Xr * c, Xr) == doctest::Approx(s).epsilon(1e-10).scale(1.0));
  }
  CHECK_THROWS_AS(sse(y, Eigen::MatrixXd::Ones(4, 1)), DimensionError);
}

TEST_CASE("exact hyperparameters") {
  CHECK(parse_rational("-0.5") == Rational(-1, 2));
  CHECK(parse_rational("1e-3") == Rational(1, 1000));
  CHECK(parse_rational("2.5E1") == Rational(25));
  CHECK(parse_rational("3/4") == Rational(3, 4));
  CHECK(parse_rational(".25") == Rational(1, 4));
  CHECK(rational_from_double(0.1) == Rational(1, 10));
  CHECK(rational_from_double(-2.3) == Rational(-23, 10));
  CHECK(to_string(Rational(-1, 2)) == "-0.5");
  CHECK(to_string(Rational(1, 3)) == "1/3");
  CHECK(to_string(Rational(7)) == "7");
  CHECK(to_string(Rational(1, 40)) == "0.025");
  CHECK_THROWS_AS(parse_rational("abc"), ParseError);
  CHECK_THROWS_AS(parse_rational("1/0"), ParseError);
  CHECK_THROWS_AS(parse_rational("."), ParseError);
  CHECK(Hyper::parse("-0.5").value == -0.5);
}

TEST_CASE("model specification validation") {
  auto [X, Z] = one_way_design(3, 2);
  const auto eps = default_registry().get("epsilon_skew");
  TpnEffects tpn{eps, {ShapePrior::uniform(-1, 1)}};
  ModelSpec spec(X, Z, {3}, tpn, standard_diffuse_prior(1));
  CHECK(spec.n() == 6);
  CHECK(spec.t() == 2);
  CHECK(spec.rank_xz() == 3);
  CHECK(spec.factor_of(2) == 0);

  CHECK_THROWS_AS(ModelSpec(X, Z, {2}, tpn, standard_diffuse_prior(1)), DimensionError);
  CHECK_THROWS_AS(ModelSpec(X, Z, {3}, tpn, standard_diffuse_prior(2)), ConfigError);
  Eigen::MatrixXd Xbad(6, 2);
  Xbad << X, X;
  CHECK_THROWS_AS(ModelSpec(Xbad, Z, {3}, tpn, standard_diffuse_prior(1)), ConfigError);
  CHECK_THROWS_AS(ModelSpec(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1), {1}, NormalEffects{},
                            standard_diffuse_prior(1)),
                  ConfigError);
  auto neg = standard_diffuse_prior(1);
  neg.b[1] = Hyper::parse("-1");
  CHECK_THROWS_AS(ModelSpec(X, Z, {3}, tpn, neg), DomainError);
  TpnEffects outside{default_registry().get("inverse_scale_factors"), {ShapePrior::uniform(-1, 1)}};
  CHECK_THROWS_AS(ModelSpec(X, Z, {3}, outside, standard_diffuse_prior(1)), DomainError);
  CHECK_THROWS_AS(ModelSpec(X, Z, {3}, NormalEffects{}, HalfCauchyPrior{Hyper::of(0), {-1.0}}), DomainError);
  Eigen::MatrixXd Znan = Z;
  Znan(0, 0) = std::nan("");
  CHECK_THROWS_AS(ModelSpec(X, Znan, {3}, NormalEffects{}, standard_diffuse_prior(1)), DomainError);
}
