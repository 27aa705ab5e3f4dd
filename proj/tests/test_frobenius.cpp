#include <doctest.h>

#include <cmath>

#include "robmer/errors.hpp"
#include "robmer/frobenius.hpp"
#include "robmer/rng.hpp"

using namespace robmer;

namespace {

MarketModel scalar_market(double r = 0.02, double mu = 0.08, double var = 0.04) {
  MarketModel m;
  m.r = r;
  m.mu_hat = VectorXd::Constant(1, mu);
  m.sigma_cov = MatrixXd::Constant(1, 1, var);
  return m;
}

Preferences infinite_prefs(double rho = 0.05, double R = 2.0) {
  Preferences p;
  p.rho = rho;
  p.R = R;
  p.horizon = InfiniteHorizon{};
  return p;
}

MarketModel random_two_asset(std::uint64_t idx) {
  MatrixXd a(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      a(i, j) = rng::normal2(31, idx, static_cast<std::uint64_t>(2 * i + j), 0)[0];
  MarketModel m;
  m.r = 0.02;
  m.mu_hat.resize(2);
  m.mu_hat << 0.05 + 0.03 * rng::normal2(31, idx, 100, 0)[0],
      0.05 + 0.03 * rng::normal2(31, idx, 101, 0)[0];
  m.sigma_cov = 0.02 * (a * a.transpose() + 2.0 * MatrixXd::Identity(2, 2));
  return m;
}

double lambda_min(const MatrixXd& s) {
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(s, Eigen::EigenvaluesOnly)
      .eigenvalues()
      .minCoeff();
}

}  // namespace

TEST_SUITE("frobenius") {

TEST_CASE("inner worst case: scalar example") {
  const ValidatedProblem p = validate(scalar_market(), AmbiguityModel{0.1, FrobeniusBall{0.01}},
                                      infinite_prefs());
  const VectorXd pi = VectorXd::Constant(1, 0.4);
  const auto inner = frobenius::worst_cov_frobenius(p, pi);
  CHECK(inner.B_scalar == doctest::Approx(0.16).epsilon(1e-15));
  CHECK(inner.A_scalar == doctest::Approx(0.04 * 0.16).epsilon(1e-15));
  CHECK(inner.sigma_bar(0, 0) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(inner.xi == doctest::Approx(0.4 * std::sqrt(0.05)).epsilon(1e-14));

  CHECK_THROWS_AS(frobenius::worst_cov_frobenius(p, VectorXd::Zero(1)), ZeroPortfolio);
}

TEST_CASE("inner worst case beats every sampled ball perturbation") {
  // The quadratic form at the returned dyad is pi' sigma pi + delta |pi|^2;
  // no symmetric X with |X|_F <= delta does better.
  const ValidatedProblem p = validate(random_two_asset(3), AmbiguityModel{0.1, FrobeniusBall{0.015}},
                                      infinite_prefs());
  VectorXd pi(2);
  pi << 0.6, -0.25;
  const auto inner = frobenius::worst_cov_frobenius(p, pi);
  const double closed = pi.dot(inner.sigma_bar * pi);
  CHECK(closed ==
        doctest::Approx(pi.dot(p.market.sigma_cov * pi) + 0.015 * pi.squaredNorm())
            .epsilon(1e-13));
  for (int k = 0; k < 3000; ++k) {
    MatrixXd g(2, 2);
    const auto z1 = rng::normal2(32, static_cast<std::uint64_t>(k), 0, 0);
    const auto z2 = rng::normal2(32, static_cast<std::uint64_t>(k), 1, 0);
    g << z1[0], z1[1], z2[0], z2[1];
    MatrixXd x = 0.5 * (g + g.transpose());
    x *= 0.015 / x.norm();  // Frobenius norm in Eigen
    const double val = pi.dot((p.market.sigma_cov + x) * pi);
    CHECK(val <= closed + 1e-12);
  }
}

TEST_CASE("multiplier route agrees with the boundary dyad") {
  // First-order conditions: X* = f'(xi^2) Theta / (2 lambda_bar) with
  // f(y) = eps sqrt(y) + R y / 2, and |X*|_F = delta closes the system.
  for (std::uint64_t k = 0; k < 50; ++k) {
    const MarketModel m = random_two_asset(100 + k);
    const double delta = 0.4 * lambda_min(m.sigma_cov);
    const ValidatedProblem p =
        validate(m, AmbiguityModel{0.08, FrobeniusBall{delta}}, infinite_prefs());
    VectorXd pi(2);
    pi << 0.2 + 0.1 * static_cast<double>(k % 5), -0.3 + 0.07 * static_cast<double>(k % 9);
    const auto inner = frobenius::worst_cov_frobenius(p, pi);
    const double fprime = 0.5 * p.prefs.R + 0.5 * p.ambiguity.epsilon / inner.xi;
    CHECK(fprime * inner.B_scalar / (2.0 * inner.lambda_bar) ==
          doctest::Approx(delta).epsilon(1e-12));
  }
}

TEST_CASE("rank-one worst form equals the identity-shift form for every holding") {
  // max over the ball of pi' (sigma + X) pi is pi' sigma pi + delta |pi|^2,
  // i.e. the quadratic form of sigma + delta I, in any dimension.
  for (std::uint64_t k = 0; k < 200; ++k) {
    const MarketModel m = random_two_asset(300 + k);
    const double delta = 0.3 * lambda_min(m.sigma_cov);
    const ValidatedProblem p =
        validate(m, AmbiguityModel{0.1, FrobeniusBall{delta}}, infinite_prefs());
    VectorXd pi(2);
    const auto z = rng::normal2(33, k, 0, 0);
    pi << z[0], z[1];
    if (pi.isZero(0.0)) continue;
    const auto inner = frobenius::worst_cov_frobenius(p, pi);
    const double dyad_form = pi.dot(inner.sigma_bar * pi);
    const double shift_form =
        pi.dot((p.market.sigma_cov + delta * MatrixXd::Identity(2, 2)) * pi);
    CHECK(dyad_form == doctest::Approx(shift_form).epsilon(1e-13));
  }
}

TEST_CASE("scalar solve matches the dyad-shifted market: sigma 0.05 holding 0.376") {
  const ValidatedProblem p = validate(scalar_market(), AmbiguityModel{0.1, FrobeniusBall{0.01}},
                                      infinite_prefs());
  const auto rep = frobenius::solve_infinite_frobenius(p);
  const double h_bar = 0.06 / std::sqrt(0.05);
  const double pi_expect = (h_bar - 0.1) / (2.0 * h_bar) * (0.06 / 0.05);
  CHECK(rep.well_posed);
  CHECK(rep.H == doctest::Approx(h_bar).epsilon(1e-12));
  CHECK(rep.worst_cov(0, 0) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(rep.pi_eps(0) == doctest::Approx(pi_expect).epsilon(1e-10));
  CHECK(rep.pi_eps(0) == doctest::Approx(0.3763932022500211).epsilon(1e-9));

  // Same report as the plain kernel run on the shifted scalar market.
  const auto direct = kernel::solve_infinite(
      validate(scalar_market(0.02, 0.08, 0.05), AmbiguityModel{0.1, {}}, infinite_prefs()));
  CHECK(rep.pi_eps(0) == doctest::Approx(direct.pi_eps(0)).epsilon(1e-10));
  CHECK(rep.gamma_eps == doctest::Approx(direct.gamma_eps).epsilon(1e-12));
}

TEST_CASE("zero radius reduces to the plain kernel solve") {
  const ValidatedProblem p = validate(scalar_market(), AmbiguityModel{0.1, FrobeniusBall{0.0}},
                                      infinite_prefs());
  const auto rep = frobenius::solve_infinite_frobenius(p);
  const auto plain = kernel::solve_infinite(
      validate(scalar_market(), AmbiguityModel{0.1, {}}, infinite_prefs()));
  CHECK(rep.pi_eps(0) == doctest::Approx(plain.pi_eps(0)).epsilon(1e-14));
  CHECK(rep.gamma_eps == doctest::Approx(plain.gamma_eps).epsilon(1e-14));
  CHECK(rep.worst_cov(0, 0) == 0.04);
}

TEST_CASE("fixed point is self-consistent and the ball stays positive definite") {
  for (std::uint64_t k = 0; k < 40; ++k) {
    const MarketModel m = random_two_asset(500 + k);
    const double delta = 0.5 * lambda_min(m.sigma_cov);
    const ValidatedProblem p =
        validate(m, AmbiguityModel{0.05, FrobeniusBall{delta}}, infinite_prefs());
    const auto rep = frobenius::solve_infinite_frobenius(p);
    REQUIRE(rep.well_posed);
    CHECK(lambda_min(rep.worst_cov) > 0.0);
    if (rep.pi_eps.isZero(0.0)) continue;

    // Another full round trip through the inner worst case and the best
    // response moves the holding by less than 1e-9.
    const auto inner = frobenius::worst_cov_frobenius(p, rep.pi_eps);
    CHECK((inner.sigma_bar - rep.worst_cov).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::LLT<MatrixXd> llt(inner.sigma_bar);
    const VectorXd x = llt.solve(p.excess());
    const double h = std::sqrt(x.dot(p.excess()));
    const VectorXd br = std::max(h - 0.05, 0.0) / (2.0 * h) * x;
    CHECK((br - rep.pi_eps).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("two-asset solve equals the kernel at the identity-shifted covariance") {
  // The worst quadratic form is that of sigma + delta I for every holding, so
  // the saddle point (holding, sharpe, shrink, merton direction, gamma) of
  // the ball problem coincides with the plain ellipsoidal solve there.
  for (std::uint64_t k = 0; k < 40; ++k) {
    MarketModel m = random_two_asset(700 + k);
    const double delta = 0.45 * lambda_min(m.sigma_cov);
    const double eps = (k % 2 == 0) ? 0.04 : 0.12;
    const auto rep = frobenius::solve_infinite_frobenius(
        validate(m, AmbiguityModel{eps, FrobeniusBall{delta}}, infinite_prefs()));

    MarketModel shifted = m;
    shifted.sigma_cov = m.sigma_cov + delta * MatrixXd::Identity(2, 2);
    const auto direct = kernel::solve_infinite(
        validate(shifted, AmbiguityModel{eps, {}}, infinite_prefs()));

    REQUIRE(rep.well_posed == direct.well_posed);
    CHECK(std::abs(rep.H - direct.H) < 1e-9);
    CHECK(std::abs(rep.H_eps_plus - direct.H_eps_plus) < 1e-9);
    CHECK(std::abs(rep.gamma_eps - direct.gamma_eps) < 1e-10);
    if (rep.well_posed && !rep.pi_eps.isZero(0.0)) {
      CHECK((rep.pi_eps - direct.pi_eps).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((rep.merton_pi - direct.merton_pi).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("cutoff: ambiguity above the shifted sharpe ratio stops investing") {
  // sharpe(sigma + delta I) = 0.06 / sqrt(0.05) ~ 0.2683 in the scalar case;
  // eps = 0.28 sits above it but below the unshifted sharpe 0.30, so the ball
  // alone forces the investor out.
  const ValidatedProblem p = validate(scalar_market(), AmbiguityModel{0.28, FrobeniusBall{0.01}},
                                      infinite_prefs());
  const auto rep = frobenius::solve_infinite_frobenius(p);
  CHECK(rep.well_posed);
  CHECK(rep.pi_eps.norm() == 0.0);
  CHECK(rep.H == doctest::Approx(0.06 / std::sqrt(0.05)).epsilon(1e-10));
  CHECK(rep.H_eps_plus == 0.0);
  CHECK(rep.gamma_eps == doctest::Approx(0.035).epsilon(1e-14));
  CHECK((rep.worst_cov - p.market.sigma_cov).cwiseAbs().maxCoeff() == 0.0);
  CHECK((rep.worst_mu - p.market.mu_hat).norm() == 0.0);

  // The plain solve at eps = 0.28 would still invest; the ball is what bites.
  const auto plain = kernel::solve_infinite(
      validate(scalar_market(), AmbiguityModel{0.28, {}}, infinite_prefs()));
  CHECK(plain.pi_eps.norm() > 0.0);
}

TEST_CASE("cutoff threshold in two dimensions equals the shifted sharpe ratio") {
  const MarketModel m = random_two_asset(900);
  const double delta = 0.4 * lambda_min(m.sigma_cov);
  MarketModel shifted = m;
  shifted.sigma_cov = m.sigma_cov + delta * MatrixXd::Identity(2, 2);
  const double h_eff = sharpe_ratio(shifted.mu_hat, shifted.sigma_cov, shifted.r);

  const auto below = frobenius::solve_infinite_frobenius(
      validate(m, AmbiguityModel{0.999 * h_eff, FrobeniusBall{delta}}, infinite_prefs()));
  CHECK(below.pi_eps.norm() > 0.0);
  const auto above = frobenius::solve_infinite_frobenius(
      validate(m, AmbiguityModel{1.001 * h_eff, FrobeniusBall{delta}}, infinite_prefs()));
  CHECK(above.pi_eps.norm() == 0.0);
  CHECK(above.H == doctest::Approx(h_eff).epsilon(1e-9));
}

TEST_CASE("variant and horizon guards") {
  const ValidatedProblem no_ball =
      validate(scalar_market(), AmbiguityModel{0.1, {}}, infinite_prefs());
  CHECK_THROWS_AS(frobenius::solve_infinite_frobenius(no_ball), UnsupportedVariant);

  Preferences fin = infinite_prefs();
  fin.horizon = FiniteHorizon{1.0, 1.0};
  const ValidatedProblem finite_ball =
      validate(scalar_market(), AmbiguityModel{0.1, FrobeniusBall{0.01}}, fin);
  CHECK_THROWS_AS(frobenius::solve_infinite_frobenius(finite_ball), UnsupportedVariant);
}

}  // TEST_SUITE
