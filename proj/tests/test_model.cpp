#include <doctest.h>

#include <cmath>

#include "robmer/errors.hpp"
#include "robmer/model.hpp"

using namespace robmer;

namespace {

MarketModel scalar_market(double r = 0.02, double mu = 0.08, double var = 0.04) {
  MarketModel m;
  m.r = r;
  m.mu_hat = VectorXd::Constant(1, mu);
  m.sigma_cov = MatrixXd::Constant(1, 1, var);
  return m;
}

MarketModel two_asset_market() {
  MarketModel m;
  m.r = 0.02;
  m.mu_hat.resize(2);
  m.mu_hat << 0.08, 0.06;
  m.sigma_cov.resize(2, 2);
  m.sigma_cov << 0.04, 0.01, 0.01, 0.09;
  return m;
}

Preferences base_prefs() {
  Preferences p;
  p.rho = 0.05;
  p.R = 2.0;
  p.horizon = InfiniteHorizon{};
  return p;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("validate accepts the one-asset base market") {
  const ValidatedProblem p = validate(scalar_market(), AmbiguityModel{0.1, {}}, base_prefs());
  CHECK(p.market.n() == 1);
  CHECK(p.excess()(0) == doctest::Approx(0.06).epsilon(1e-15));
  CHECK(p.ambiguity.epsilon == 0.1);
}

TEST_CASE("validate rejects an indefinite covariance") {
  // Eigenvalues 0.09 and -0.01: symmetric but not positive definite.
  MarketModel m = two_asset_market();
  m.sigma_cov << 0.04, 0.05, 0.05, 0.04;
  CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, {}}, base_prefs()), NonSPDCovariance);
}

TEST_CASE("validate symmetrizes roundoff asymmetry but rejects gross asymmetry") {
  MarketModel m = two_asset_market();
  m.sigma_cov(0, 1) += 1e-14 * m.sigma_cov(0, 1);
  const ValidatedProblem p = validate(m, AmbiguityModel{0.1, {}}, base_prefs());
  CHECK(p.market.sigma_cov(0, 1) == p.market.sigma_cov(1, 0));

  m.sigma_cov(0, 1) = 0.02;  // far beyond the 1e-12 relative tolerance
  CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, {}}, base_prefs()), NonSPDCovariance);
}

TEST_CASE("validate rejects bad preferences and ambiguity radii") {
  const MarketModel m = scalar_market();
  const AmbiguityModel amb{0.1, {}};

  Preferences p = base_prefs();
  p.R = 1.0;
  CHECK_THROWS_AS(validate(m, amb, p), BadPreferences);
  p.R = -2.0;
  CHECK_THROWS_AS(validate(m, amb, p), BadPreferences);
  p = base_prefs();
  p.rho = 0.0;
  CHECK_THROWS_AS(validate(m, amb, p), BadPreferences);
  p = base_prefs();
  p.horizon = FiniteHorizon{-1.0, 1.0};
  CHECK_THROWS_AS(validate(m, amb, p), BadPreferences);
  p.horizon = FiniteHorizon{1.0, 0.0};
  CHECK_THROWS_AS(validate(m, amb, p), BadPreferences);

  CHECK_THROWS_AS(validate(m, AmbiguityModel{-0.1, {}}, base_prefs()), BadAmbiguity);
  const double nan = std::nan("");
  CHECK_THROWS_AS(validate(m, AmbiguityModel{nan, {}}, base_prefs()), BadAmbiguity);
}

TEST_CASE("validate checks each volatility ambiguity variant") {
  const Preferences prefs = base_prefs();

  SUBCASE("diagonal box needs a diagonal covariance containing the diagonal") {
    MarketModel m = two_asset_market();  // has off-diagonal 0.01
    DiagonalBox box;
    box.lower.resize(2);
    box.upper.resize(2);
    box.lower << 0.01, 0.01;
    box.upper << 0.10, 0.10;
    CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, box}, prefs), InconsistentBox);

    m.sigma_cov << 0.04, 0.0, 0.0, 0.09;
    CHECK_NOTHROW(validate(m, AmbiguityModel{0.1, box}, prefs));

    box.upper << 0.05, 0.05;  // upper < diag for asset 2
    CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, box}, prefs), InconsistentBox);

    box.upper.resize(1);  // wrong length
    CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, box}, prefs), InconsistentBox);
  }

  SUBCASE("eigenvalue cap must clear the spectrum") {
    const MarketModel m = two_asset_market();  // lambda_max ~ 0.0919
    CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, EigenvalueCap{0.05}}, prefs),
                    CapBelowSpectrum);
    CHECK_NOTHROW(validate(m, AmbiguityModel{0.1, EigenvalueCap{0.12}}, prefs));
  }

  SUBCASE("frobenius radius must stay below the smallest eigenvalue") {
    const MarketModel m = two_asset_market();  // lambda_min ~ 0.0381
    CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, FrobeniusBall{0.05}}, prefs),
                    DeltaTooLarge);
    CHECK_THROWS_AS(validate(m, AmbiguityModel{0.1, FrobeniusBall{-0.01}}, prefs),
                    DeltaTooLarge);
    CHECK_NOTHROW(validate(m, AmbiguityModel{0.1, FrobeniusBall{0.01}}, prefs));
  }
}

TEST_CASE("sharpe ratio of the base market is 0.30") {
  const MarketModel m = scalar_market();
  CHECK(sharpe_ratio(m.mu_hat, m.sigma_cov, m.r) == doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("two-asset sharpe ratio matches the hand-solved inverse") {
  // det = 0.04*0.09 - 0.01^2 = 0.0035, Sigma^{-1} (0.06, 0.04)' = (10/7, 2/7)',
  // so H^2 = 0.06*10/7 + 0.04*2/7 = 0.68/7.
  const MarketModel m = two_asset_market();
  const double h = sharpe_ratio(m.mu_hat, m.sigma_cov, m.r);
  CHECK(h == doctest::Approx(std::sqrt(0.68 / 7.0)).epsilon(1e-13));

  const ValidatedProblem p = validate(m, AmbiguityModel{0.1, {}}, base_prefs());
  CHECK(sharpe_ratio(p, m.mu_hat) == doctest::Approx(h).epsilon(1e-14));
}

TEST_CASE("market price of ambiguity: scalar example and ellipsoid boundary") {
  const ValidatedProblem p = validate(scalar_market(), AmbiguityModel{0.1, {}}, base_prefs());
  VectorXd mu = VectorXd::Constant(1, 0.06);
  // L = 0.2, so phi = (0.06 - 0.08) / 0.2 = -0.1.
  const VectorXd phi = market_price_of_ambiguity(p, mu);
  CHECK(phi(0) == doctest::Approx(-0.1).epsilon(1e-14));
  CHECK(phi.norm() <= p.ambiguity.epsilon + 1e-14);

  // Drifts of the form mu_hat - eps * Sigma theta / sqrt(theta' Sigma theta)
  // sit exactly on the ellipsoid boundary: |phi| = eps.
  const ValidatedProblem q =
      validate(two_asset_market(), AmbiguityModel{0.17, {}}, base_prefs());
  VectorXd theta(2);
  for (const auto& dir : {std::pair{1.0, 0.0}, std::pair{0.3, -0.8}, std::pair{-2.0, 5.0}}) {
    theta << dir.first, dir.second;
    const VectorXd st = q.market.sigma_cov * theta;
    const VectorXd mu_b = q.market.mu_hat - 0.17 * st / std::sqrt(theta.dot(st));
    CHECK(market_price_of_ambiguity(q, mu_b).norm() ==
          doctest::Approx(0.17).epsilon(1e-10));
  }
}

TEST_CASE("cholesky accessors reproduce the covariance") {
  const ValidatedProblem p =
      validate(two_asset_market(), AmbiguityModel{0.1, {}}, base_prefs());
  const MatrixXd L = p.vol_factor();
  CHECK((L * L.transpose() - p.market.sigma_cov).cwiseAbs().maxCoeff() < 1e-15);

  VectorXd v(2);
  v << 0.3, -0.7;
  const VectorXd x = p.cov_solve(v);
  CHECK((p.market.sigma_cov * x - v).cwiseAbs().maxCoeff() < 1e-14);
}

}  // TEST_SUITE
