#include "robmer/model.hpp"

#include <cmath>
#include <sstream>

namespace robmer {

namespace {

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

std::string dim_str(const MatrixXd& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

// Relative symmetry tolerance for accepting a covariance input.
constexpr double kSymTol = 1e-12;

void check_preferences(const Preferences& prefs) {
  if (!std::isfinite(prefs.rho) || prefs.rho <= 0.0)
    throw BadPreferences("preferences: rho must be a positive finite number");
  if (!std::isfinite(prefs.R) || prefs.R <= 0.0)
    throw BadPreferences("preferences: R must be a positive finite number");
  if (std::abs(prefs.R - 1.0) <= 1e-9)
    throw BadPreferences("preferences: R = 1 (log utility) is outside the model");
  if (const auto* fin = std::get_if<FiniteHorizon>(&prefs.horizon)) {
    if (!std::isfinite(fin->T) || fin->T <= 0.0)
      throw BadPreferences("preferences: horizon T must be a positive finite number");
    if (!std::isfinite(fin->A) || fin->A <= 0.0)
      throw BadPreferences("preferences: bequest weight A must be a positive finite number");
  }
}

void check_vol_ambiguity(const MarketModel& market, const MatrixXd& cov,
                         const VolAmbiguity& vol) {
  const int n = market.n();
  if (const auto* box = std::get_if<DiagonalBox>(&vol)) {
    if (box->lower.size() != n || box->upper.size() != n)
      throw InconsistentBox("diagonal box: bound vectors must have length n");
    double max_diag = cov.diagonal().cwiseAbs().maxCoeff();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && std::abs(cov(i, j)) > kSymTol * max_diag)
          throw InconsistentBox("diagonal box: covariance must be diagonal");
    for (int i = 0; i < n; ++i) {
      if (!(box->lower[i] > 0.0))
        throw InconsistentBox("diagonal box: lower bounds must be positive");
      if (!(box->lower[i] <= cov(i, i) && cov(i, i) <= box->upper[i]))
        throw InconsistentBox("diagonal box: need lower <= diag(cov) <= upper per asset");
    }
    if (!box->lower.allFinite() || !box->upper.allFinite())
      throw InconsistentBox("diagonal box: bounds must be finite");
  } else if (const auto* cap = std::get_if<EigenvalueCap>(&vol)) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    double lam_max = es.eigenvalues().maxCoeff();
    if (!std::isfinite(cap->lambda_bar_sq) || cap->lambda_bar_sq < lam_max)
      throw CapBelowSpectrum("eigenvalue cap: lambda_bar_sq must be >= lambda_max(cov) = " +
                             std::to_string(lam_max));
  } else if (const auto* ball = std::get_if<FrobeniusBall>(&vol)) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    double lam_min = es.eigenvalues().minCoeff();
    if (!std::isfinite(ball->delta) || ball->delta < 0.0)
      throw DeltaTooLarge("frobenius ball: delta must be a finite nonnegative number");
    if (ball->delta >= lam_min)
      throw DeltaTooLarge("frobenius ball: delta must be < lambda_min(cov) = " +
                          std::to_string(lam_min) + " to keep the ball positive definite");
  }
}

}  // namespace

ValidatedProblem validate(const MarketModel& market, const AmbiguityModel& ambiguity,
                          const Preferences& prefs) {
  const int n = market.n();
  if (n < 1) throw NonSPDCovariance("market: need at least one asset");
  if (!std::isfinite(market.r))
    throw BadPreferences("market: riskless rate must be finite");
  if (!market.mu_hat.allFinite())
    throw BadPreferences("market: mu_hat must be finite");
  if (market.sigma_cov.rows() != n || market.sigma_cov.cols() != n)
    throw NonSPDCovariance("market: covariance must be " + std::to_string(n) + "x" +
                           std::to_string(n) + ", got " + dim_str(market.sigma_cov));
  if (!all_finite(market.sigma_cov))
    throw NonSPDCovariance("market: covariance must be finite");

  double scale = market.sigma_cov.cwiseAbs().maxCoeff();
  double asym = (market.sigma_cov - market.sigma_cov.transpose()).cwiseAbs().maxCoeff();
  if (scale <= 0.0 || asym > kSymTol * scale)
    throw NonSPDCovariance("market: covariance not symmetric within 1e-12 relative tolerance");

  MarketModel sym = market;
  sym.sigma_cov = 0.5 * (market.sigma_cov + market.sigma_cov.transpose());

  Eigen::LLT<MatrixXd> llt(sym.sigma_cov);
  if (llt.info() != Eigen::Success)
    throw NonSPDCovariance("market: covariance is not positive definite");

  if (!std::isfinite(ambiguity.epsilon) || ambiguity.epsilon < 0.0)
    throw BadAmbiguity("ambiguity: epsilon must be a finite nonnegative number");
  check_vol_ambiguity(sym, sym.sigma_cov, ambiguity.vol);
  check_preferences(prefs);

  return ValidatedProblem{sym, ambiguity, prefs, std::move(llt)};
}

double sharpe_ratio(const VectorXd& mu, const MatrixXd& cov, double r) {
  Eigen::LLT<MatrixXd> llt(0.5 * (cov + cov.transpose()));
  if (llt.info() != Eigen::Success)
    throw NonSPDCovariance("sharpe_ratio: covariance is not positive definite");
  VectorXd excess = mu.array() - r;
  double h2 = excess.dot(llt.solve(excess));
  return std::sqrt(std::max(h2, 0.0));
}

double sharpe_ratio(const ValidatedProblem& p, const VectorXd& mu) {
  VectorXd excess = mu.array() - p.market.r;
  double h2 = excess.dot(p.cov_solve(excess));
  return std::sqrt(std::max(h2, 0.0));
}

VectorXd market_price_of_ambiguity(const ValidatedProblem& p, const VectorXd& mu) {
  // phi = L^{-1}(mu - mu_hat), so |phi|^2 = (mu - mu_hat)' cov^{-1} (mu - mu_hat).
  VectorXd d = mu - p.market.mu_hat;
  return p.cov_chol.matrixL().solve(d);
}

}  // namespace robmer
