#pragma once

#include "robmer/kernel.hpp"

// Frobenius-ball volatility ambiguity: the covariance ranges over
// { S symmetric psd : |S - sigma_cov|_F <= delta } with delta < lambda_min,
// jointly with the drift ellipsoid taken at the worst-case covariance.
// Unlike the box/cap variants the worst case depends on the portfolio, so the
// outer portfolio problem is solved by damped fixed-point iteration.

namespace robmer::frobenius {

using robmer::kernel::InfiniteHorizonReport;

/// Inner worst case for a fixed relative portfolio pi != 0. The adversary
/// maximizes eps*sqrt(pi' S pi) + (R/2) pi' S pi over the ball, a monotone
/// function of the quadratic form, so the optimum sits on the boundary along
/// the normalized dyad:
///   Sigma_bar = sigma_cov + delta * Theta / |Theta|_F,   Theta = pi pi'.
/// The multiplier route from the first-order conditions is kept alongside as
/// a cross-check; both are exposed here.
struct FrobeniusInner {
  MatrixXd Theta;           // pi pi'
  double A_scalar = 0.0;    // <Theta, sigma_cov>
  double B_scalar = 0.0;    // |Theta|_F = |pi|^2
  double xi = 0.0;          // sqrt(A + delta B) = sqrt(pi' Sigma_bar pi)
  double lambda_bar = 0.0;  // multiplier (R xi + eps) B / (4 delta xi)
  MatrixXd sigma_bar;
};

/// Throws ZeroPortfolio when |pi| = 0 (the inner problem is degenerate there).
FrobeniusInner worst_cov_frobenius(const ValidatedProblem& p, const VectorXd& pi);

/// Infinite-horizon solve under Frobenius-ball ambiguity. Damped fixed-point
/// iteration pi <- (1-omega) pi + omega pi*(Sigma_bar(pi)) with omega = 0.5,
/// started from the solve at sigma_cov, stopping at 1e-10 sup-norm movement
/// (at most 1e4 iterations, then NoConvergence), finished with one undamped
/// best-response step. When the Sharpe ratio at the limiting direction dyad
/// falls at or below eps the investment is zero; by convention the report
/// then carries worst_cov = sigma_cov while H/H_eps_plus/shrink refer to the
/// limiting dyad that decides the cutoff. Ill-posedness (gamma_eps <= 0 at
/// the fixed point) is reported structurally, as in the kernel solver.
InfiniteHorizonReport solve_infinite_frobenius(const ValidatedProblem& p);

}  // namespace robmer::frobenius
