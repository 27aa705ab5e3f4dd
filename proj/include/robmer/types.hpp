#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <variant>

namespace robmer {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Market primitives. The covariance matrix is the primitive object; the
// volatility matrix, where needed, is its lower Cholesky factor. Rates and
// drifts are annualized continuous-compounding quantities.
struct MarketModel {
  double r = 0.0;       // riskless rate
  VectorXd mu_hat;      // estimated drift vector, length n
  MatrixXd sigma_cov;   // estimated covariance, n x n, symmetric positive definite

  int n() const { return static_cast<int>(mu_hat.size()); }
};

// Volatility ambiguity variants. `none` pins the covariance at the estimate.
struct DiagonalBox {
  VectorXd lower;  // per-asset variance lower bounds, > 0
  VectorXd upper;  // per-asset variance upper bounds, >= diag(sigma_cov)
};

struct EigenvalueCap {
  double lambda_bar_sq = 0.0;  // spectral cap, >= lambda_max(sigma_cov)
};

struct FrobeniusBall {
  double delta = 0.0;  // Frobenius radius, 0 <= delta < lambda_min(sigma_cov)
};

using VolAmbiguity = std::variant<std::monostate, DiagonalBox, EigenvalueCap, FrobeniusBall>;

struct AmbiguityModel {
  double epsilon = 0.0;  // drift-ellipsoid radius, >= 0
  VolAmbiguity vol;      // defaults to none
};

struct InfiniteHorizon {};

struct FiniteHorizon {
  double T = 1.0;  // horizon in years, > 0
  double A = 1.0;  // bequest weight, > 0
};

using Horizon = std::variant<InfiniteHorizon, FiniteHorizon>;

// CRRA preferences u(t, c) = e^{-rho t} c^{1-R}/(1-R). R = 1 (log utility)
// is outside the model and rejected by validation.
struct Preferences {
  double rho = 0.05;  // impatience, > 0
  double R = 2.0;     // relative risk aversion, > 0, != 1
  Horizon horizon;

  bool infinite() const { return std::holds_alternative<InfiniteHorizon>(horizon); }
};

inline double crra_utility(double c, double R) {
  return std::pow(c, 1.0 - R) / (1.0 - R);
}

}  // namespace robmer
