#pragma once

#include "robmer/model.hpp"

// Independent brute-force verifiers for the closed forms: sampled set
// minimizations, the HJB residual in analytic and finite-difference form, and
// the minimax (weak-duality) gap. These deliberately avoid the kernel's
// formulas except where a closed-form candidate point is injected into a
// sample set to certify attainment.

namespace robmer::oracle {

struct OracleConfig {
  std::int64_t n_samples = 100000;  // >= 1e3
  int grid_points_per_dim = 101;
  std::uint64_t seed = 0;
  double tolerance = 1e-6;  // > 0
};

void check(const OracleConfig& cfg);  // throws InputError on invariant violation

struct SampledMin {
  double value = 0.0;
  VectorXd argmin;
};

/// Minimum of theta' mu over sampled boundary points mu = mu_hat + eps L u of
/// the drift ellipsoid (u uniform on the sphere, L the covariance factor),
/// with the closed-form candidate direction included in the sample set.
SampledMin ellipsoid_min_sampled(const VectorXd& theta, const MatrixXd& cov, double eps,
                                 const VectorXd& mu_hat, const OracleConfig& cfg);

/// Robust HJB expression at (t, w, theta, c) for the candidate value function
/// V(t,w) = gamma^{-R} e^{-rho t} w^{1-R}/(1-R):
///   u(t,c) + V_t + V_w (r w + theta'(mu_hat - r 1) - eps sqrt(theta' S theta) - c)
///         + (1/2) theta' S theta V_ww,
/// with S the effective worst-case covariance of the problem's variant (for
/// the Frobenius ball, sigma_cov + delta I, which carries the worst quadratic
/// form for every holding). Evaluated twice: with analytic derivatives of V
/// and with relative-step (1e-5) central differences; when the two disagree
/// beyond 1e-6 * scale the differences are redone with Richardson
/// extrapolation on a coarser step pair (roundoff, not truncation, dominates
/// at step 1e-5). `scale` is e^{-rho t} w^{1-R}, the discounted utility
/// magnitude residual tolerances are measured against.
struct HjbResidual {
  double analytic = 0.0;
  double finite_diff = 0.0;
  double scale = 0.0;
};

HjbResidual hjb_residual(double gamma_eps, double t, double w, const VectorXd& theta,
                         double c, const ValidatedProblem& p);

/// Weak-duality check of the saddle value. lower = robust value
/// gamma_eps^{-R} w0^{1-R}/(1-R); upper = min over a grid of constant drifts
/// mu in the ellipsoid of the classical value gamma(mu)^{-R} w0^{1-R}/(1-R)
/// at the effective covariance. The grid is cfg.n_samples boundary points
/// plus the closed-form candidates (worst drift, and the zero-Sharpe point
/// when eps >= H). gap = upper - lower >= 0 up to rounding, and -> 0 as the
/// grid refines.
struct MinimaxGap {
  double lower = 0.0;
  double upper = 0.0;
  double gap = 0.0;
  VectorXd argmin_mu;
};

MinimaxGap minimax_gap(const ValidatedProblem& p, double w0, const OracleConfig& cfg);

/// Sampled minimum over the covariance set of the adversary's reduced
/// objective -(eps sqrt(pi' S pi) + (R/2) pi' S pi). Samples per variant:
/// box corners and interior points; random orthogonal conjugations of capped
/// spectra; random symmetric perturbations scaled to the Frobenius ball. The
/// closed-form candidate covariance is included in every variant's set.
struct VolSetMin {
  double value = 0.0;
  MatrixXd argmin_cov;
};

VolSetMin volset_min_sampled(const VectorXd& pi, const ValidatedProblem& p,
                             const OracleConfig& cfg);

}  // namespace robmer::oracle
