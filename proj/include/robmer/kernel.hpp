#pragma once

#include <functional>
#include <optional>
#include <string>

#include "robmer/model.hpp"

// Closed-form robust consumption/investment rules under drift ambiguity
// (ellipsoid of radius eps around mu_hat in the cov^{-1} metric) and the
// covariance-set variants that reduce to a constant effective covariance.

namespace robmer::kernel {

/// Worst-case drift for a given asset holding theta (currency units or
/// proportions; only the direction matters):
///   mu(theta) = mu_hat - eps * cov theta / sqrt(theta' cov theta),
/// the minimizer of theta' mu over the ellipsoid. At theta = 0 every drift in
/// the ellipsoid is equally bad and mu_hat is returned by convention.
VectorXd worst_case_drift(const VectorXd& theta, const MatrixXd& cov, double eps,
                          const VectorXd& mu_hat);

/// Worst-case (effective) covariance for the holding-independent variants:
/// none -> sigma_cov; diagonal box -> Diag(upper); eigenvalue cap ->
/// lambda_bar_sq * I, which attains the maximal quadratic form for every
/// holding. The Frobenius-ball variant is holding-dependent and lives in
/// frobenius.hpp; passing it here throws UnsupportedVariant.
MatrixXd worst_case_cov(const MarketModel& market, const AmbiguityModel& ambiguity);

/// Robust consumption rate gamma_eps = (rho + (R-1)(r + (H_eps_plus)^2/(2R)))/R.
/// The infinite-horizon problem is well posed exactly when this is positive.
double gamma_epsilon(const Preferences& prefs, double r, double h_eps_plus);

/// Witness that the infinite-horizon value diverges when gamma_eps <= 0 and
/// 0 < R < 1: the constant-proportion plan theta = witness_pi * wealth,
/// c = witness_lambda * wealth gives expected utility growing like
/// exp(divergence_exponent * t) with a positive exponent. For gamma_eps = 0
/// exactly, the hyperbolic plan c_t = (R/(1-R))/(1+t) * wealth makes the
/// utility integral diverge harmonically and witness_lambda is 0.
struct IllPosedDiagnostic {
  VectorXd witness_pi;
  double witness_lambda = 0.0;
  double divergence_exponent = 0.0;
  std::string note;
};

struct InfiniteHorizonReport {
  bool well_posed = false;
  double gamma_eps = 0.0;  // consumption rate; reported (<= 0) even when ill-posed
  double H = 0.0;          // Sharpe ratio at the effective covariance
  double H_eps_plus = 0.0; // max(H - eps, 0)
  double shrink = 0.0;     // H_eps_plus / H, 0 when H = 0
  VectorXd pi_eps;         // robust proportions; empty when ill-posed
  VectorXd merton_pi;      // eps = 0 benchmark (1/R) cov_bar^{-1}(mu_hat - r 1)
  VectorXd worst_mu;
  MatrixXd worst_cov;
  double R = 0.0;
  double rho = 0.0;
  std::optional<IllPosedDiagnostic> diagnostic;

  /// V(0, w0) = gamma_eps^{-R} w0^{1-R}/(1-R). Ill-posed: +inf for R < 1
  /// (utility unbounded above), -inf for R > 1 (no plan has finite utility).
  double value_at(double w0) const;
};

/// Infinite-horizon solve for the none/box/cap ambiguity variants.
/// pi_eps = (H_eps_plus / (R H)) cov_bar^{-1} (mu_hat - r 1), consumption
/// c = gamma_eps * wealth. Ill-posedness is a structured result: well_posed
/// is false and `diagnostic` carries the divergence witness.
InfiniteHorizonReport solve_infinite(const ValidatedProblem& p);

struct FiniteHorizonReport {
  double k_eps = 0.0;      // (1-R)(r + (H_eps_plus)^2/(2R))
  double H = 0.0;
  double H_eps_plus = 0.0;
  double shrink = 0.0;
  VectorXd pi_eps;
  VectorXd merton_pi;
  VectorXd worst_mu;
  MatrixXd worst_cov;
  double T = 0.0;
  double A = 1.0;
  double R = 0.0;
  double rho = 0.0;

  /// g(t) = A^{1/R} e^{k(T-t)/R} + e^{-kt/R} Int_t^T e^{(k-rho)s/R} ds, the
  /// R-th root of the consumption-scaling function; g(T) = A^{1/R} exactly.
  /// The integral has a closed form; the degenerate branch |k - rho| <= 1e-12
  /// uses the limiting (T-t) form.
  double g(double t) const;

  /// Consumption rate at time t: c_t = rate * wealth, rate = e^{-rho t/R}/g(t).
  double consumption_rate(double t) const;

  /// V(0, w0) = g(0)^R w0^{1-R}/(1-R).
  double value_at(double w0) const;
};

/// Finite-horizon solve (always well posed); same pi_eps as the infinite case.
FiniteHorizonReport solve_finite(const ValidatedProblem& p);

/// Log-wealth law of the optimally controlled process under the worst-case
/// measure:
///   log w_t = log w0 + log_drift * t - consumption_drag(t) + log_vol' W_t,
/// log_vol = cov_bar_factor' pi_eps. Infinite horizon: the constant rate is
/// folded into log_drift (drag = 0), so
///   log_drift = r + (H+)^2 (2R-1)/(2R^2) - gamma_eps,
/// equivalently (r - rho + (H+)^2/2)/R. Finite horizon: log_drift keeps only
/// the r + (H+)^2 (2R-1)/(2R^2) part and consumption_drag(t) is the
/// deterministic integral of the rate over [0, t], evaluated by composite
/// Simpson quadrature with 1e4 panels.
struct WealthLaw {
  double log_drift = 0.0;
  VectorXd log_vol;
  std::function<double(double)> consumption_drag;  // identically 0 for infinite horizon
};

WealthLaw optimal_wealth_law(const InfiniteHorizonReport& r, const MarketModel& market);
WealthLaw optimal_wealth_law(const FiniteHorizonReport& r, const MarketModel& market);

/// Composite Simpson rule on [a, b] with an even number of panels.
double simpson(const std::function<double(double)>& f, double a, double b, int panels);

}  // namespace robmer::kernel
