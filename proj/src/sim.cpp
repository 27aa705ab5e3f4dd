#include "robmer/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "robmer/errors.hpp"
#include "robmer/rng.hpp"

namespace robmer::sim {

double pairwise_sum(const double* x, std::int64_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::int64_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

Controls controls_of(const kernel::InfiniteHorizonReport& r) {
  if (!r.well_posed)
    throw IllPosed("simulation controls need a well-posed infinite-horizon solution");
  Controls c;
  c.pi = r.pi_eps;
  c.rate0 = r.gamma_eps;
  return c;
}

Controls controls_of(const kernel::FiniteHorizonReport& r) {
  Controls c;
  c.pi = r.pi_eps;
  c.rate0 = r.consumption_rate(0.0);
  c.rate_fn = [rep = r](double t) { return rep.consumption_rate(t); };
  return c;
}

PathEnsemble simulate(const MarketModel& market, const Controls& controls,
                      const Measure& measure, const Preferences& prefs,
                      const SimConfig& cfg, double w0) {
  const int n = market.n();
  if (controls.pi.size() != n || measure.mu.size() != n || measure.cov.rows() != n ||
      measure.cov.cols() != n)
    throw InputError("simulate: dimension mismatch between market, controls and measure");
  if (cfg.n_paths < 1) throw InputError("simulate: n_paths must be at least 1");
  if (!(cfg.dt > 0.0)) throw InputError("simulate: dt must be positive");
  if (!(cfg.t_max > 0.0)) throw InputError("simulate: t_max must be positive");
  if (!(w0 > 0.0)) throw InputError("simulate: w0 must be positive");
  if (!controls.pi.allFinite() || !measure.mu.allFinite() || !measure.cov.allFinite())
    throw InputError("simulate: non-finite inputs");

  const std::int64_t n_steps =
      std::max<std::int64_t>(1, std::llround(cfg.t_max / cfg.dt));
  const double dt = cfg.t_max / static_cast<double>(n_steps);
  const double sqrt_dt = std::sqrt(dt);

  Eigen::LLT<MatrixXd> chol(MatrixXd(0.5 * (measure.cov + measure.cov.transpose())));
  if (chol.info() != Eigen::Success)
    throw NonSPDCovariance("simulate: measure covariance is not positive definite");
  const MatrixXd L = chol.matrixL();
  const VectorXd loading = L.transpose() * controls.pi;  // log-wealth diffusion loading
  const double quad = loading.squaredNorm();              // pi' cov pi
  const bool noiseless = quad == 0.0;

  const double R = prefs.R;
  const double rho = prefs.rho;
  const double drift_base =
      market.r + controls.pi.dot((measure.mu.array() - market.r).matrix());

  // Rates on the step grid; for a time-varying rate the per-step consumption
  // drag of log wealth is the 3-point Simpson integral of the rate.
  const bool const_rate = controls.constant_rate();
  std::vector<double> rates(static_cast<std::size_t>(n_steps) + 1);
  std::vector<double> drags;
  if (const_rate) {
    std::fill(rates.begin(), rates.end(), controls.rate0);
  } else {
    for (std::int64_t k = 0; k <= n_steps; ++k)
      rates[static_cast<std::size_t>(k)] = controls.rate(dt * static_cast<double>(k));
    drags.resize(static_cast<std::size_t>(n_steps));
    for (std::int64_t k = 0; k < n_steps; ++k) {
      const double mid = controls.rate(dt * (static_cast<double>(k) + 0.5));
      drags[static_cast<std::size_t>(k)] =
          dt / 6.0 *
          (rates[static_cast<std::size_t>(k)] + 4.0 * mid +
           rates[static_cast<std::size_t>(k) + 1]);
    }
  }
  const double const_drag = controls.rate0 * dt;

  std::vector<double> disc(static_cast<std::size_t>(n_steps) + 1);
  for (std::int64_t k = 0; k <= n_steps; ++k)
    disc[static_cast<std::size_t>(k)] = std::exp(-rho * dt * static_cast<double>(k));

  // Recording grid: thinned to bound memory; utility is accumulated at full
  // resolution below, so thinning never touches the estimates.
  const std::int64_t stride = cfg.record_stride > 0
                                  ? cfg.record_stride
                                  : std::max<std::int64_t>(1, (n_steps + 249) / 250);
  std::vector<std::int64_t> rec;
  for (std::int64_t k = 0; k < n_steps; k += stride) rec.push_back(k);
  rec.push_back(n_steps);
  const auto n_rec = static_cast<std::int64_t>(rec.size());

  PathEnsemble out;
  out.times.resize(n_rec);
  for (std::int64_t j = 0; j < n_rec; ++j)
    out.times(j) = dt * static_cast<double>(rec[static_cast<std::size_t>(j)]);
  out.wealth.resize(cfg.n_paths, n_rec);
  out.consumption.resize(cfg.n_paths, n_rec);
  out.util_integral.assign(static_cast<std::size_t>(cfg.n_paths), 0.0);
  out.terminal_wealth.assign(static_cast<std::size_t>(cfg.n_paths), 0.0);
  out.flagged.assign(static_cast<std::size_t>(cfg.n_paths), 0);

  const bool exact = cfg.scheme == Scheme::ExactLog;
  const double log_step = (drift_base - 0.5 * quad) * dt;  // pre-consumption increment

  auto run_paths = [&](std::int64_t p0, std::int64_t p1) {
    std::vector<double> z(static_cast<std::size_t>(n));
    for (std::int64_t p = p0; p < p1; ++p) {
      double w = w0;
      double logw = std::log(w0);
      bool dead = false;
      double util = 0.0;
      double f_prev = rates[0] > 0.0 ? disc[0] * crra_utility(rates[0] * w0, R) : 0.0;
      out.wealth(p, 0) = w0;
      out.consumption(p, 0) = rates[0] * w0;
      std::int64_t rj = 1;
      for (std::int64_t k = 0; k < n_steps; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        if (!dead) {
          double shock = 0.0;
          if (!noiseless) {
            rng::fill_normals(cfg.seed, static_cast<std::uint64_t>(p),
                              static_cast<std::uint64_t>(k), z.data(), n);
            for (int j = 0; j < n; ++j)
              shock += loading(j) * z[static_cast<std::size_t>(j)];
          }
          if (exact) {
            logw += log_step - (const_rate ? const_drag : drags[ks]) + sqrt_dt * shock;
            w = std::exp(logw);
          } else {
            w = w * (1.0 + (drift_base - rates[ks]) * dt + sqrt_dt * shock);
            if (!(w > 0.0)) {
              // admissibility violation: freeze the path and drop it from stats
              dead = true;
              w = 0.0;
            }
          }
        }
        const double rate_next = rates[ks + 1];
        if (!dead) {
          const double f_next =
              rate_next > 0.0 ? disc[ks + 1] * crra_utility(rate_next * w, R) : 0.0;
          util += 0.5 * (f_prev + f_next) * dt;
          f_prev = f_next;
        }
        if (rj < n_rec && rec[static_cast<std::size_t>(rj)] == k + 1) {
          out.wealth(p, rj) = w;
          out.consumption(p, rj) = rate_next * w;
          ++rj;
        }
      }
      out.util_integral[static_cast<std::size_t>(p)] = util;
      out.terminal_wealth[static_cast<std::size_t>(p)] = w;
      out.flagged[static_cast<std::size_t>(p)] = dead ? 1 : 0;
    }
  };

  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || cfg.n_paths < 2 * threads) {
    run_paths(0, cfg.n_paths);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t chunk = (cfg.n_paths + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::int64_t p0 = std::min<std::int64_t>(cfg.n_paths, chunk * t);
      const std::int64_t p1 = std::min<std::int64_t>(cfg.n_paths, chunk * (t + 1));
      if (p0 < p1) pool.emplace_back(run_paths, p0, p1);
    }
    for (auto& th : pool) th.join();
  }
  for (std::int64_t p = 0; p < cfg.n_paths; ++p)
    out.n_violations += out.flagged[static_cast<std::size_t>(p)];

  out.measure_tag = measure.tag;
  out.seed = cfg.seed;
  out.dt = dt;
  out.t_max = cfg.t_max;
  out.w0 = w0;
  out.R = R;
  out.rho = rho;
  out.pi = controls.pi;
  out.rate0 = controls.rate(0.0);
  out.constant_rate = const_rate;
  out.log_drift = drift_base - (const_rate ? controls.rate0 : 0.0) - 0.5 * quad;
  out.diff_norm2 = quad;
  return out;
}

UtilityEstimate realized_utility(const PathEnsemble& ensemble, const Preferences& prefs) {
  const double R = prefs.R;
  const auto n_paths = static_cast<std::int64_t>(ensemble.util_integral.size());
  std::vector<double> xs;
  xs.reserve(static_cast<std::size_t>(n_paths));

  double tail = 0.0;
  if (!prefs.infinite()) {
    const auto& fh = std::get<FiniteHorizon>(prefs.horizon);
    if (std::abs(ensemble.t_max - fh.T) > 1e-9 * std::max(1.0, fh.T))
      throw HorizonMismatch(
          "realized utility: ensemble horizon differs from the preference horizon");
    for (std::int64_t p = 0; p < n_paths; ++p) {
      const auto ps = static_cast<std::size_t>(p);
      if (ensemble.flagged[ps]) continue;
      xs.push_back(ensemble.util_integral[ps] +
                   fh.A * crra_utility(ensemble.terminal_wealth[ps], R));
    }
  } else {
    for (std::int64_t p = 0; p < n_paths; ++p) {
      const auto ps = static_cast<std::size_t>(p);
      if (ensemble.flagged[ps]) continue;
      xs.push_back(ensemble.util_integral[ps]);
    }
    if (ensemble.constant_rate && ensemble.rate0 > 0.0) {
      // Geometric tail of the omitted [t_max, inf) utility under the simulated
      // lognormal law: E[e^{-rho t} u(c_t)] = u(rate0 w0) e^{q t} with
      // q = -rho + (1-R) a + (1-R)^2 b^2 / 2, finite exactly when q < 0.
      const double q = -ensemble.rho + (1.0 - R) * ensemble.log_drift +
                       0.5 * (1.0 - R) * (1.0 - R) * ensemble.diff_norm2;
      tail = q < 0.0 ? crra_utility(ensemble.rate0 * ensemble.w0, R) *
                           std::exp(q * ensemble.t_max) / (-q)
                     : std::numeric_limits<double>::quiet_NaN();
    }
  }
  if (xs.empty()) throw DegenerateSample("realized utility: no retained paths");

  UtilityEstimate est;
  est.n_used = static_cast<std::int64_t>(xs.size());
  est.estimate = pairwise_sum(xs.data(), est.n_used) / static_cast<double>(est.n_used);
  if (est.n_used > 1) {
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = xs[i] - est.estimate;
      sq[i] = d * d;
    }
    const double var =
        pairwise_sum(sq.data(), est.n_used) / static_cast<double>(est.n_used - 1);
    est.std_error = std::sqrt(var / static_cast<double>(est.n_used));
  }
  est.tail_bound = tail;
  return est;
}

std::vector<StressRow> ambiguity_stress(const ValidatedProblem& p, const Controls& controls,
                                        const MatrixXd& sigma_bar, int n_measures,
                                        const SimConfig& cfg) {
  const int n = p.market.n();
  if (n_measures < 0) throw InputError("stress: n_measures must be nonnegative");
  if (sigma_bar.rows() != n || sigma_bar.cols() != n)
    throw InputError("stress: covariance dimension mismatch");
  if (controls.pi.size() != n) throw InputError("stress: holding dimension mismatch");

  Eigen::LLT<MatrixXd> chol(MatrixXd(0.5 * (sigma_bar + sigma_bar.transpose())));
  if (chol.info() != Eigen::Success)
    throw NonSPDCovariance("stress: covariance is not positive definite");
  const MatrixXd L = chol.matrixL();
  const double eps = p.ambiguity.epsilon;

  std::vector<Measure> measures;
  measures.push_back(
      {kernel::worst_case_drift(controls.pi, sigma_bar, eps, p.market.mu_hat), sigma_bar,
       "worst"});
  measures.push_back({p.market.mu_hat, sigma_bar, "center"});
  for (int i = 0; i < n_measures; ++i) {
    VectorXd z(n);
    rng::fill_normals(cfg.seed ^ 0x9e3779b97f4a7c15ull, static_cast<std::uint64_t>(i), 0,
                      z.data(), n);
    const double zn = z.norm();
    VectorXd u;
    if (zn < 1e-300)
      u = VectorXd::Unit(n, 0);
    else
      u = z / zn;
    measures.push_back(
        {p.market.mu_hat + eps * (L * u), sigma_bar, "boundary-" + std::to_string(i)});
  }

  // One shared seed across all measures (common random numbers): rows differ
  // only through the drift, and with eps = 0 the table is exactly constant.
  std::vector<StressRow> rows;
  rows.reserve(measures.size());
  for (const auto& msr : measures) {
    const PathEnsemble ens = simulate(p.market, controls, msr, p.prefs, cfg);
    const UtilityEstimate est = realized_utility(ens, p.prefs);
    rows.push_back({msr.tag, msr.mu, est.estimate, est.std_error});
  }
  return rows;
}

}  // namespace robmer::sim
