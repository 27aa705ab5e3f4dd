#pragma once

#include "robmer/errors.hpp"
#include "robmer/types.hpp"

namespace robmer {

/// A market/ambiguity/preference triple that passed validation, together with
/// the Cholesky factorization of the (symmetrized) covariance. All solvers and
/// oracles take this; linear systems in the estimated covariance go through
/// the stored factorization, never an explicit inverse.
struct ValidatedProblem {
  MarketModel market;
  AmbiguityModel ambiguity;
  Preferences prefs;
  Eigen::LLT<MatrixXd> cov_chol;

  /// Solve sigma_cov * x = v.
  VectorXd cov_solve(const VectorXd& v) const { return cov_chol.solve(v); }

  /// Lower Cholesky factor L with L L' = sigma_cov.
  MatrixXd vol_factor() const { return cov_chol.matrixL(); }

  /// Excess drift mu_hat - r 1.
  VectorXd excess() const {
    return (market.mu_hat.array() - market.r).matrix();
  }
};

/// Validates inputs and freezes the covariance factorization.
///
/// The covariance must be symmetric to within 1e-12 relative tolerance; it is
/// symmetrized as (S + S')/2 before factoring so downstream algebra sees an
/// exactly symmetric matrix. Throws NonSPDCovariance, InconsistentBox,
/// CapBelowSpectrum, DeltaTooLarge, BadAmbiguity or BadPreferences, each
/// naming the violated condition.
ValidatedProblem validate(const MarketModel& market, const AmbiguityModel& ambiguity,
                          const Preferences& prefs);

/// Maximal Sharpe ratio sqrt((mu - r 1)' cov^{-1} (mu - r 1)). Factorizes cov
/// internally; throws NonSPDCovariance if that fails.
double sharpe_ratio(const VectorXd& mu, const MatrixXd& cov, double r);

/// Same, but reusing a problem's stored factorization of sigma_cov.
double sharpe_ratio(const ValidatedProblem& p, const VectorXd& mu);

/// Drift-distortion kernel of a candidate drift mu against the estimate:
/// phi = sigma' cov^{-1} (mu - mu_hat) = L^{-1} (mu - mu_hat). A drift lies in
/// the ambiguity ellipsoid of radius eps exactly when |phi| <= eps.
VectorXd market_price_of_ambiguity(const ValidatedProblem& p, const VectorXd& mu);

}  // namespace robmer
