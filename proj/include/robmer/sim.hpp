#pragma once

#include <functional>
#include <string>
#include <vector>

#include "robmer/kernel.hpp"

// Monte Carlo verification layer: simulates wealth under proportional
// controls and a fixed (drift, covariance) measure, and estimates realized
// utility. Reductions use fixed-order pairwise summation and all randomness
// is counter-based, so results are bit-identical across runs and thread
// counts.

namespace robmer::sim {

enum class Scheme {
  ExactLog,  // exact log-wealth integration (GBM with deterministic rate drag)
  Euler      // Euler-Maruyama on wealth; positivity violations flag the path
};

struct SimConfig {
  std::int64_t n_paths = 10000;
  double dt = 1.0 / 2520.0;  // rounded so that t_max is an integer number of steps
  double t_max = 200.0;      // horizon; finite-horizon runs must use t_max = T
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::ExactLog;
  int threads = 1;        // worker threads; results do not depend on this
  int record_stride = 0;  // grid thinning for stored paths; 0 = auto (<= ~250 points)
};

/// Proportional controls: holdings pi * wealth and consumption rate(t) * wealth.
struct Controls {
  VectorXd pi;
  double rate0 = 0.0;                     // used when rate_fn is empty
  std::function<double(double)> rate_fn;  // time-varying rate, optional

  double rate(double t) const { return rate_fn ? rate_fn(t) : rate0; }
  bool constant_rate() const { return !rate_fn; }
};

Controls controls_of(const kernel::InfiniteHorizonReport& r);
Controls controls_of(const kernel::FiniteHorizonReport& r);

struct Measure {
  VectorXd mu;
  MatrixXd cov;
  std::string tag;
};

/// Simulated ensemble. Paths are recorded on a strided grid to bound memory;
/// the per-path discounted-utility integral and terminal wealth are
/// accumulated at full step resolution during the walk, so utility estimates
/// do not depend on the recording stride.
struct PathEnsemble {
  VectorXd times;                      // recorded grid, starts at 0, ends at t_max
  MatrixXd wealth;                     // n_paths x times.size()
  MatrixXd consumption;                // rate(t) * wealth on the same grid
  std::vector<double> util_integral;   // per path: trapezoid of e^{-rho t} u(c_t) over [0, t_max]
  std::vector<double> terminal_wealth;
  std::vector<std::uint8_t> flagged;   // Euler positivity violations; excluded from statistics
  std::int64_t n_violations = 0;
  std::string measure_tag;
  std::uint64_t seed = 0;
  double dt = 0.0;     // effective step after rounding
  double t_max = 0.0;
  double w0 = 1.0;
  double R = 0.0;
  double rho = 0.0;
  // measure/control summary used for the analytic truncation tail bound
  VectorXd pi;
  double rate0 = 0.0;
  bool constant_rate = true;
  double log_drift = 0.0;   // r + pi'(mu - r1) - rate0 - pi' cov pi / 2 (constant-rate case)
  double diff_norm2 = 0.0;  // pi' cov pi
};

PathEnsemble simulate(const MarketModel& market, const Controls& controls,
                      const Measure& measure, const Preferences& prefs,
                      const SimConfig& cfg, double w0 = 1.0);

/// Sample mean and standard error of realized utility across retained paths.
/// Finite horizon (t_max = T required): per-path utility integral plus the
/// bequest A u(w_T). Infinite horizon: the truncated integral, plus the
/// analytic geometric tail of the omitted [t_max, inf) piece, valid for
/// constant-rate controls; `tail_bound` is that signed tail (0 in the finite
/// case) and the estimate brackets the true value as estimate + tail_bound.
struct UtilityEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  double tail_bound = 0.0;
  std::int64_t n_used = 0;
};

UtilityEstimate realized_utility(const PathEnsemble& ensemble, const Preferences& prefs);

/// Realized utility of fixed controls under a spread of constant-drift
/// measures from the ellipsoid at the worst-case covariance: the worst-case
/// measure, the center mu_hat, and boundary samples. All rows share one seed
/// (common random numbers), so with eps = 0 the table is exactly constant.
struct StressRow {
  std::string tag;
  VectorXd mu;
  double estimate = 0.0;
  double std_error = 0.0;
};

std::vector<StressRow> ambiguity_stress(const ValidatedProblem& p, const Controls& controls,
                                        const MatrixXd& sigma_bar, int n_measures,
                                        const SimConfig& cfg);

/// Deterministic fixed-order pairwise sum (recursive halving).
double pairwise_sum(const double* x, std::int64_t n);

}  // namespace robmer::sim
