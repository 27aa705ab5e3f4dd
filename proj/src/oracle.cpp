#include "robmer/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "robmer/errors.hpp"
#include "robmer/rng.hpp"

namespace robmer::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Effective constant covariance carrying the adversary's worst quadratic form
// for every holding. For the Frobenius ball the best response is the
// holding-dependent dyad sigma + delta pp'/|p|^2, but its quadratic form at p
// equals p'(sigma + delta I)p, so the identity shift is the correct constant
// stand-in inside scalar expressions.
MatrixXd effective_cov(const ValidatedProblem& p) {
  const int n = p.market.n();
  if (const auto* box = std::get_if<DiagonalBox>(&p.ambiguity.vol))
    return MatrixXd(box->upper.asDiagonal());
  if (const auto* cap = std::get_if<EigenvalueCap>(&p.ambiguity.vol))
    return cap->lambda_bar_sq * MatrixXd::Identity(n, n);
  if (const auto* ball = std::get_if<FrobeniusBall>(&p.ambiguity.vol))
    return p.market.sigma_cov + ball->delta * MatrixXd::Identity(n, n);
  return p.market.sigma_cov;
}

// Unit vector from one counter-RNG stream; the measure-zero event of a zero
// draw falls back to the first axis.
VectorXd sphere_point(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                      int n) {
  VectorXd z(n);
  rng::fill_normals(seed, stream, substream, z.data(), n);
  const double norm = z.norm();
  if (norm < 1e-300) {
    z.setZero();
    z(0) = 1.0;
    return z;
  }
  return z / norm;
}

}  // namespace

void check(const OracleConfig& cfg) {
  if (cfg.n_samples < 1000)
    throw InputError("oracle config: n_samples must be at least 1000");
  if (cfg.grid_points_per_dim < 2)
    throw InputError("oracle config: grid_points_per_dim must be at least 2");
  if (!(cfg.tolerance > 0.0) || !std::isfinite(cfg.tolerance))
    throw InputError("oracle config: tolerance must be positive and finite");
}

SampledMin ellipsoid_min_sampled(const VectorXd& theta, const MatrixXd& cov, double eps,
                                 const VectorXd& mu_hat, const OracleConfig& cfg) {
  check(cfg);
  const int n = static_cast<int>(mu_hat.size());
  if (theta.size() != n || cov.rows() != n || cov.cols() != n)
    throw InputError("ellipsoid oracle: dimension mismatch");
  if (!std::isfinite(eps) || eps < 0.0)
    throw BadAmbiguity("ellipsoid oracle: epsilon must be finite and nonnegative");
  Eigen::LLT<MatrixXd> chol(MatrixXd(0.5 * (cov + cov.transpose())));
  if (chol.info() != Eigen::Success)
    throw NonSPDCovariance("ellipsoid oracle: covariance is not positive definite");

  SampledMin out;
  const double base = theta.dot(mu_hat);
  const MatrixXd L = chol.matrixL();
  // theta'(mu_hat + eps L u) = base + v'u with v = eps L' theta.
  const VectorXd v = eps * (L.transpose() * theta);
  const double vn = v.norm();
  if (vn == 0.0) {
    // Degenerate objective (theta = 0 or eps = 0): every member ties.
    out.value = base;
    out.argmin = mu_hat;
    return out;
  }

  // Closed-form candidate direction first, then the random boundary sweep.
  VectorXd best_u = -v / vn;
  double best = base + v.dot(best_u);
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    const VectorXd u = sphere_point(cfg.seed, static_cast<std::uint64_t>(i), 0, n);
    const double val = base + v.dot(u);
    if (val < best) {
      best = val;
      best_u = u;
    }
  }
  out.value = best;
  out.argmin = mu_hat + eps * (L * best_u);
  return out;
}

HjbResidual hjb_residual(double gamma_eps, double t, double w, const VectorXd& theta,
                         double c, const ValidatedProblem& p) {
  if (!(w > 0.0)) throw InputError("hjb oracle: wealth must be positive");
  if (!(c > 0.0)) throw InputError("hjb oracle: consumption must be positive");
  if (!(gamma_eps > 0.0))
    throw IllPosed("hjb oracle: candidate value needs a positive consumption rate");
  if (theta.size() != p.market.n())
    throw InputError("hjb oracle: holding dimension mismatch");

  const double R = p.prefs.R;
  const double rho = p.prefs.rho;
  const double r = p.market.r;
  const double eps = p.ambiguity.epsilon;
  const MatrixXd S = effective_cov(p);
  const VectorXd m = p.excess();

  const double y = std::max(theta.dot(S * theta), 0.0);
  const double b = r * w + theta.dot(m) - eps * std::sqrt(y) - c;
  const double gpow = std::pow(gamma_eps, -R);
  const double disc = std::exp(-rho * t);

  auto V = [&](double tt, double ww) {
    return gpow * std::exp(-rho * tt) * std::pow(ww, 1.0 - R) / (1.0 - R);
  };
  const double running = disc * std::pow(c, 1.0 - R) / (1.0 - R);
  auto assemble = [&](double vt, double vw, double vww) {
    return running + vt + vw * b + 0.5 * y * vww;
  };

  const double Vw = gpow * disc * std::pow(w, -R);
  HjbResidual out;
  out.scale = disc * std::pow(w, 1.0 - R);
  out.analytic = assemble(-rho * V(t, w), Vw, -R * Vw / w);

  auto d_dt = [&](double h) { return (V(t + h, w) - V(t - h, w)) / (2.0 * h); };
  auto d_dw = [&](double h) { return (V(t, w + h) - V(t, w - h)) / (2.0 * h); };
  auto d2_dw = [&](double h) {
    return (V(t, w + h) - 2.0 * V(t, w) + V(t, w - h)) / (h * h);
  };

  const double ht = 1e-5 * std::max(1.0, std::abs(t));
  const double hw = 1e-5 * w;
  out.finite_diff = assemble(d_dt(ht), d_dw(hw), d2_dw(hw));

  if (std::abs(out.analytic - out.finite_diff) > 1e-6 * out.scale) {
    // The second difference runs out of floating-point headroom at step 1e-5
    // (cancellation noise scales like 1/h^2). Redo on a 20x coarser pair and
    // remove the reintroduced truncation term by Richardson extrapolation.
    auto rich = [](auto f, double h) { return (4.0 * f(h) - f(2.0 * h)) / 3.0; };
    out.finite_diff =
        assemble(rich(d_dt, 20.0 * ht), rich(d_dw, 20.0 * hw), rich(d2_dw, 20.0 * hw));
  }
  return out;
}

MinimaxGap minimax_gap(const ValidatedProblem& p, double w0, const OracleConfig& cfg) {
  check(cfg);
  if (!p.prefs.infinite())
    throw HorizonMismatch("minimax oracle: infinite-horizon problems only");
  if (!(w0 > 0.0)) throw InputError("minimax oracle: w0 must be positive");

  const double R = p.prefs.R;
  const double rho = p.prefs.rho;
  const double r = p.market.r;
  const double eps = p.ambiguity.epsilon;
  const int n = p.market.n();

  const MatrixXd S = effective_cov(p);
  Eigen::LLT<MatrixXd> chol(S);
  if (chol.info() != Eigen::Success)
    throw NonSPDCovariance("minimax oracle: effective covariance is not positive definite");
  const MatrixXd L = chol.matrixL();
  const VectorXd m = p.excess();
  const double H = chol.matrixL().solve(m).norm();
  const double h_plus = std::max(H - eps, 0.0);
  const double gamma_eps = (rho + (R - 1.0) * (r + h_plus * h_plus / (2.0 * R))) / R;
  if (!(gamma_eps > 0.0))
    throw IllPosed("minimax oracle: robust problem is ill posed (gamma_eps <= 0)");

  const double util_w = std::pow(w0, 1.0 - R) / (1.0 - R);

  // Classical (single-model) value at a fixed drift; +inf marks drifts whose
  // classical problem is itself ill posed (possible only for R < 1).
  auto classical = [&](const VectorXd& mu) {
    const double Hm = chol.matrixL().solve((mu.array() - r).matrix()).norm();
    const double g = (rho + (R - 1.0) * (r + Hm * Hm / (2.0 * R))) / R;
    return g > 0.0 ? std::pow(g, -R) * util_w : kInf;
  };

  MinimaxGap out;
  out.lower = std::pow(gamma_eps, -R) * util_w;
  out.upper = kInf;

  auto consider = [&](const VectorXd& mu) {
    const double val = classical(mu);
    if (val < out.upper) {
      out.upper = val;
      out.argmin_mu = mu;
    }
  };

  // Closed-form candidates first: the Sharpe-minimizing member (a boundary
  // point when the ellipsoid excludes the riskless drift, r*1 itself
  // otherwise) and the center.
  if (eps < H)
    consider(p.market.mu_hat - (eps / H) * m);
  else
    consider(VectorXd::Constant(n, r));
  consider(p.market.mu_hat);

  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const VectorXd u = sphere_point(cfg.seed, idx, 1, n);
    const double radius = std::pow(rng::uniform1(cfg.seed, idx, 2, 0), 1.0 / n);
    consider(p.market.mu_hat + eps * (L * (radius * u)));
  }
  out.gap = out.upper - out.lower;
  return out;
}

VolSetMin volset_min_sampled(const VectorXd& pi, const ValidatedProblem& p,
                             const OracleConfig& cfg) {
  check(cfg);
  const int n = p.market.n();
  if (pi.size() != n)
    throw InputError("volatility-set oracle: holding dimension mismatch");

  const double eps = p.ambiguity.epsilon;
  const double R = p.prefs.R;
  // Adversary's reduced objective in relative derivative coordinates:
  // -(eps sqrt(pi' S pi) + (R/2) pi' S pi), to be minimized over the set.
  auto objective = [&](const MatrixXd& S) {
    const double y = std::max(pi.dot(S * pi), 0.0);
    return -(eps * std::sqrt(y) + 0.5 * R * y);
  };

  VolSetMin out;
  out.argmin_cov = p.market.sigma_cov;
  out.value = objective(out.argmin_cov);

  auto consider = [&](const MatrixXd& S) {
    const double val = objective(S);
    if (val < out.value) {
      out.value = val;
      out.argmin_cov = S;
    }
  };

  if (const auto* box = std::get_if<DiagonalBox>(&p.ambiguity.vol)) {
    const VectorXd& lo = box->lower;
    const VectorXd& up = box->upper;
    // Canonical candidate first so ties resolve to the closed form.
    consider(MatrixXd(up.asDiagonal()));
    if (n <= 12) {
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        VectorXd d(n);
        for (int j = 0; j < n; ++j) d(j) = ((mask >> j) & 1u) ? up(j) : lo(j);
        consider(MatrixXd(d.asDiagonal()));
      }
    } else {
      for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
        VectorXd d(n);
        for (int j = 0; j < n; ++j) {
          const double coin =
              rng::uniform1(cfg.seed, static_cast<std::uint64_t>(i), 3,
                            static_cast<std::uint32_t>(j));
          d(j) = coin > 0.5 ? up(j) : lo(j);
        }
        consider(MatrixXd(d.asDiagonal()));
      }
    }
    for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
      VectorXd d(n);
      for (int j = 0; j < n; ++j) {
        const double t = rng::uniform1(cfg.seed, static_cast<std::uint64_t>(i), 4,
                                       static_cast<std::uint32_t>(j));
        d(j) = lo(j) + t * (up(j) - lo(j));
      }
      consider(MatrixXd(d.asDiagonal()));
    }
  } else if (const auto* cap = std::get_if<EigenvalueCap>(&p.ambiguity.vol)) {
    const double lam = cap->lambda_bar_sq;
    consider(lam * MatrixXd::Identity(n, n));
    for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
      const auto idx = static_cast<std::uint64_t>(i);
      MatrixXd G(n, n);
      rng::fill_normals(cfg.seed, idx, 5, G.data(), n * n);
      const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(G).householderQ();
      VectorXd lams(n);
      for (int j = 0; j < n; ++j)
        lams(j) = lam * rng::uniform1(cfg.seed, idx, 6, static_cast<std::uint32_t>(j));
      consider(Q * lams.asDiagonal() * Q.transpose());
    }
  } else if (const auto* ball = std::get_if<FrobeniusBall>(&p.ambiguity.vol)) {
    const double delta = ball->delta;
    const double pn2 = pi.squaredNorm();
    if (delta > 0.0 && pn2 > 0.0) {
      // Boundary dyad along the holding: the adversary's best response.
      consider(p.market.sigma_cov + (delta / pn2) * (pi * pi.transpose()));
    }
    for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
      MatrixXd X(n, n);
      rng::fill_normals(cfg.seed, static_cast<std::uint64_t>(i), 7, X.data(), n * n);
      const MatrixXd E = 0.5 * (X + X.transpose());
      const double fn = E.norm();
      if (fn < 1e-300) continue;
      consider(p.market.sigma_cov + (delta / fn) * E);
    }
  }
  // The pinned-covariance variant keeps the initial {sigma_cov} evaluation.
  return out;
}

}  // namespace robmer::oracle
