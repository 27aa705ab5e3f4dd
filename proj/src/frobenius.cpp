#include "robmer/frobenius.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace robmer::frobenius {

namespace {

using robmer::kernel::gamma_epsilon;
using robmer::kernel::worst_case_drift;

constexpr double kFixedPointTol = 1e-10;   // sup-norm movement
constexpr int kMaxIterations = 10000;
constexpr double kDamping = 0.5;

double ball_delta(const ValidatedProblem& p) {
  const auto* ball = std::get_if<FrobeniusBall>(&p.ambiguity.vol);
  if (!ball)
    throw UnsupportedVariant("frobenius: ambiguity variant is not a Frobenius ball");
  return ball->delta;
}

// Investor best response to a fixed covariance: the closed-form robust rule
// with the drift ellipsoid taken at that covariance.
VectorXd best_response(const MatrixXd& sigma, const VectorXd& m, double eps, double R,
                       double* H_out = nullptr) {
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NonSPDCovariance("frobenius: candidate covariance not positive definite");
  VectorXd x = llt.solve(m);
  double H = std::sqrt(std::max(m.dot(x), 0.0));
  if (H_out) *H_out = H;
  if (H <= 0.0) return VectorXd::Zero(m.size());
  double c = std::max(H - eps, 0.0) / (R * H);
  return c * x;
}

// Reduced objective G(pi) = pi'm - eps sqrt(q) - (R/2) q with q the worst
// quadratic form pi' sigma pi + delta |pi|^2 (Cauchy-Schwarz over the ball).
// Used only by the Nelder-Mead fallback.
double outer_objective(const VectorXd& pi, const MatrixXd& sigma, const VectorXd& m,
                       double delta, double eps, double R) {
  double q = pi.dot(sigma * pi) + delta * pi.squaredNorm();
  return pi.dot(m) - eps * std::sqrt(std::max(q, 0.0)) - 0.5 * R * q;
}

VectorXd nelder_mead_max(const MatrixXd& sigma, const VectorXd& m, double delta,
                         double eps, double R, const VectorXd& start) {
  const int n = static_cast<int>(start.size());
  auto f = [&](const VectorXd& x) { return -outer_objective(x, sigma, m, delta, eps, R); };

  std::vector<VectorXd> xs(n + 1, start);
  for (int i = 0; i < n; ++i)
    xs[i + 1][i] += (std::abs(start[i]) > 1e-8 ? 0.05 * std::abs(start[i]) : 0.025);
  std::vector<double> fs(n + 1);
  for (int i = 0; i <= n; ++i) fs[i] = f(xs[i]);

  for (int it = 0; it < 20000; ++it) {
    std::vector<int> ord(n + 1);
    for (int i = 0; i <= n; ++i) ord[i] = i;
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    if (fs[ord[n]] - fs[ord[0]] < 1e-15 * (1.0 + std::abs(fs[ord[0]]))) break;

    VectorXd centroid = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[ord[i]];
    centroid /= n;
    int worst = ord[n];

    VectorXd xr = centroid + (centroid - xs[worst]);
    double fr = f(xr);
    if (fr < fs[ord[0]]) {
      VectorXd xe = centroid + 2.0 * (centroid - xs[worst]);
      double fe = f(xe);
      if (fe < fr) { xs[worst] = xe; fs[worst] = fe; }
      else { xs[worst] = xr; fs[worst] = fr; }
    } else if (fr < fs[ord[n - 1]]) {
      xs[worst] = xr; fs[worst] = fr;
    } else {
      VectorXd xc = centroid + 0.5 * (xs[worst] - centroid);
      double fc = f(xc);
      if (fc < fs[worst]) { xs[worst] = xc; fs[worst] = fc; }
      else {
        for (int i = 1; i <= n; ++i) {
          xs[ord[i]] = xs[ord[0]] + 0.5 * (xs[ord[i]] - xs[ord[0]]);
          fs[ord[i]] = f(xs[ord[i]]);
        }
      }
    }
  }
  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  return xs[best];
}

}  // namespace

FrobeniusInner worst_cov_frobenius(const ValidatedProblem& p, const VectorXd& pi) {
  const double delta = ball_delta(p);
  if (pi.size() != p.market.n())
    throw InputError("worst_cov_frobenius: portfolio has wrong dimension");
  if (pi.isZero(0.0))
    throw ZeroPortfolio("worst_cov_frobenius: inner problem is degenerate at pi = 0");

  FrobeniusInner inner;
  inner.Theta = pi * pi.transpose();
  inner.B_scalar = pi.squaredNorm();  // |pi pi'|_F
  inner.A_scalar = pi.dot(p.market.sigma_cov * pi);
  inner.xi = std::sqrt(inner.A_scalar + delta * inner.B_scalar);
  inner.lambda_bar =
      delta > 0.0
          ? (p.prefs.R * inner.xi + p.ambiguity.epsilon) * inner.B_scalar /
                (4.0 * delta * inner.xi)
          : std::numeric_limits<double>::infinity();  // point ball: constraint tight
  inner.sigma_bar =
      delta > 0.0 ? MatrixXd(p.market.sigma_cov + (delta / inner.B_scalar) * inner.Theta)
                  : p.market.sigma_cov;
  return inner;
}

InfiniteHorizonReport solve_infinite_frobenius(const ValidatedProblem& p) {
  if (!p.prefs.infinite())
    throw UnsupportedVariant("frobenius: finite-horizon Frobenius-ball is out of scope");
  const double delta = ball_delta(p);
  const double eps = p.ambiguity.epsilon;
  const double R = p.prefs.R;
  const VectorXd m = p.excess();
  const int n = p.market.n();

  InfiniteHorizonReport rep;
  rep.R = R;
  rep.rho = p.prefs.rho;

  auto finish = [&](double H, double hplus, double shrink, const VectorXd& pi,
                    const VectorXd& merton, const MatrixXd& sigma_bar) {
    rep.H = H;
    rep.H_eps_plus = hplus;
    rep.shrink = shrink;
    rep.merton_pi = merton;
    rep.worst_cov = sigma_bar;
    rep.gamma_eps = gamma_epsilon(p.prefs, p.market.r, hplus);
    rep.well_posed = rep.gamma_eps > 0.0;
    rep.worst_mu = pi.isZero(0.0) ? p.market.mu_hat
                                  : worst_case_drift(pi, sigma_bar, eps, p.market.mu_hat);
    if (rep.well_posed) {
      rep.pi_eps = pi;
    } else {
      kernel::IllPosedDiagnostic d;
      if (R > 1.0) {
        d.note = "gamma_eps <= 0 with R > 1: value diverges to -inf";
      } else {
        d.witness_pi = pi;
        d.witness_lambda = rep.gamma_eps < 0.0
                               ? -R * rep.gamma_eps / (2.0 * (1.0 - R))
                               : 0.0;
        d.divergence_exponent = -R * rep.gamma_eps / 2.0;
        d.note = "constant-proportion witness under the worst-case covariance";
      }
      rep.diagnostic = std::move(d);
    }
  };

  // Degenerate drift: no direction to invest in regardless of the ball.
  if (m.isZero(0.0)) {
    finish(0.0, 0.0, 0.0, VectorXd::Zero(n), VectorXd::Zero(n), p.market.sigma_cov);
    return rep;
  }

  // Cutoff test: Sharpe ratio at the limiting rank-one dyad along the fixed
  // direction of the best-response map (pi -> 0 limit). The direction
  // iteration contracts because the dyad perturbs sigma_cov by at most delta.
  VectorXd d = p.cov_solve(m).normalized();
  double H_limit = 0.0;
  for (int it = 0; it < 500; ++it) {
    MatrixXd dyad = p.market.sigma_cov + delta * (d * d.transpose());
    Eigen::LLT<MatrixXd> llt(dyad);
    VectorXd x = llt.solve(m);
    H_limit = std::sqrt(std::max(m.dot(x), 0.0));
    VectorXd d_new = x.normalized();
    double move = (d_new - d).cwiseAbs().maxCoeff();
    d = d_new;
    if (move < 1e-14) break;
  }
  if (eps >= H_limit) {
    // Convention: report sigma_cov as the worst covariance; H fields refer to
    // the limiting dyad that decides the cutoff.
    finish(H_limit, 0.0, 0.0, VectorXd::Zero(n), p.cov_solve(m) / R, p.market.sigma_cov);
    return rep;
  }

  // Damped fixed point on the portfolio.
  VectorXd pi = best_response(p.market.sigma_cov, m, eps, R);
  bool converged = false;
  double resid = std::numeric_limits<double>::infinity();
  int iters = 0;
  for (; iters < kMaxIterations; ++iters) {
    FrobeniusInner inner = worst_cov_frobenius(p, pi);
    VectorXd next = (1.0 - kDamping) * pi + kDamping * best_response(inner.sigma_bar, m, eps, R);
    resid = (next - pi).cwiseAbs().maxCoeff();
    pi = next;
    if (resid < kFixedPointTol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    // Direct search on the reduced objective, then re-enter the damped loop
    // for a short polish from the new start.
    pi = nelder_mead_max(p.market.sigma_cov, m, delta, eps, R, pi);
    for (int it = 0; it < 200; ++it) {
      FrobeniusInner inner = worst_cov_frobenius(p, pi);
      VectorXd next = (1.0 - kDamping) * pi + kDamping * best_response(inner.sigma_bar, m, eps, R);
      resid = (next - pi).cwiseAbs().maxCoeff();
      pi = next;
      if (resid < kFixedPointTol) { converged = true; break; }
    }
    if (!converged)
      throw NoConvergence("frobenius fixed point did not converge", kMaxIterations + 200, resid);
  }

  // One undamped best response against the converged dyad keeps the reported
  // (pi, sigma_bar, H, merton) quadruple exactly self-consistent.
  FrobeniusInner inner = worst_cov_frobenius(p, pi);
  Eigen::LLT<MatrixXd> llt(inner.sigma_bar);
  VectorXd x = llt.solve(m);
  double H = std::sqrt(std::max(m.dot(x), 0.0));
  double hplus = std::max(H - eps, 0.0);
  double shrink = H > 0.0 ? hplus / H : 0.0;
  VectorXd merton = x / R;
  finish(H, hplus, shrink, shrink * merton, merton, inner.sigma_bar);
  return rep;
}

}  // namespace robmer::frobenius
