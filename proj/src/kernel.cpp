#include "robmer/kernel.hpp"

#include <cmath>
#include <limits>

namespace robmer::kernel {

namespace {

constexpr double kDegenerateOdeTol = 1e-12;  // |k_eps - rho| branch switch

struct EffectiveSolve {
  MatrixXd sigma_bar;
  Eigen::LLT<MatrixXd> chol;
  double H = 0.0;
  double H_eps_plus = 0.0;
  double shrink = 0.0;
  VectorXd merton_pi;
  VectorXd pi_eps;
  VectorXd worst_mu;
};

// Common reduction for the holding-independent covariance variants.
EffectiveSolve reduce(const ValidatedProblem& p) {
  EffectiveSolve e;
  e.sigma_bar = worst_case_cov(p.market, p.ambiguity);
  e.chol.compute(e.sigma_bar);
  if (e.chol.info() != Eigen::Success)
    throw NonSPDCovariance("effective covariance is not positive definite");

  const VectorXd m = p.excess();
  VectorXd x = e.chol.solve(m);
  e.H = std::sqrt(std::max(m.dot(x), 0.0));
  e.H_eps_plus = std::max(e.H - p.ambiguity.epsilon, 0.0);
  e.shrink = e.H > 0.0 ? e.H_eps_plus / e.H : 0.0;
  e.merton_pi = x / p.prefs.R;
  e.pi_eps = e.shrink * e.merton_pi;
  e.worst_mu = e.pi_eps.isZero(0.0)
                   ? p.market.mu_hat
                   : worst_case_drift(e.pi_eps, e.sigma_bar, p.ambiguity.epsilon,
                                      p.market.mu_hat);
  return e;
}

IllPosedDiagnostic make_diagnostic(double gamma, double R, const VectorXd& pi_eps) {
  IllPosedDiagnostic d;
  if (R > 1.0) {
    d.witness_pi = VectorXd();
    d.note = "gamma_eps <= 0 with R > 1 (possible only for r < 0): no admissible plan "
             "attains finite utility, the value diverges to -inf";
    return d;
  }
  d.witness_pi = pi_eps;
  if (gamma < 0.0) {
    // Constant-proportion plan theta = pi w, c = lambda w: expected utility of
    // the consumption stream grows like exp((-R gamma - lambda (1 - R)) t).
    d.witness_lambda = -R * gamma / (2.0 * (1.0 - R));
    d.divergence_exponent = -R * gamma / 2.0;
    d.note = "constant-proportion witness: consuming at rate lambda*w makes expected "
             "utility grow like exp(divergence_exponent * t)";
  } else {
    // gamma == 0: the hyperbolic plan c_t = (R/(1-R))/(1+t) * w makes the
    // expected utility integrand decay like 1/(1+t); the integral diverges.
    d.witness_lambda = 0.0;
    d.divergence_exponent = 0.0;
    d.note = "boundary case gamma_eps = 0: hyperbolic consumption c_t = "
             "(R/(1-R))/(1+t) * wealth gives a harmonically divergent utility integral";
  }
  return d;
}

}  // namespace

VectorXd worst_case_drift(const VectorXd& theta, const MatrixXd& cov, double eps,
                          const VectorXd& mu_hat) {
  if (theta.size() != mu_hat.size() || cov.rows() != theta.size())
    throw InputError("worst_case_drift: dimension mismatch");
  if (theta.isZero(0.0)) return mu_hat;  // minimizer non-unique at theta = 0
  VectorXd ct = cov * theta;
  double q = theta.dot(ct);
  if (!(q > 0.0)) throw NonSPDCovariance("worst_case_drift: theta' cov theta must be positive");
  return mu_hat - (eps / std::sqrt(q)) * ct;
}

MatrixXd worst_case_cov(const MarketModel& market, const AmbiguityModel& ambiguity) {
  const int n = market.n();
  if (std::holds_alternative<std::monostate>(ambiguity.vol)) return market.sigma_cov;
  if (const auto* box = std::get_if<DiagonalBox>(&ambiguity.vol)) {
    MatrixXd s = MatrixXd::Zero(n, n);
    s.diagonal() = box->upper;
    return s;
  }
  if (const auto* cap = std::get_if<EigenvalueCap>(&ambiguity.vol))
    return cap->lambda_bar_sq * MatrixXd::Identity(n, n);
  throw UnsupportedVariant(
      "worst_case_cov: Frobenius-ball worst case depends on the holding; use "
      "worst_cov_frobenius");
}

double gamma_epsilon(const Preferences& prefs, double r, double h_eps_plus) {
  return (prefs.rho +
          (prefs.R - 1.0) * (r + h_eps_plus * h_eps_plus / (2.0 * prefs.R))) /
         prefs.R;
}

double InfiniteHorizonReport::value_at(double w0) const {
  if (!(w0 > 0.0)) throw InputError("value_at: wealth must be positive");
  if (!well_posed)
    return R < 1.0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
  return std::pow(gamma_eps, -R) * std::pow(w0, 1.0 - R) / (1.0 - R);
}

InfiniteHorizonReport solve_infinite(const ValidatedProblem& p) {
  if (!p.prefs.infinite())
    throw HorizonMismatch("solve_infinite: preferences specify a finite horizon");
  EffectiveSolve e = reduce(p);

  InfiniteHorizonReport rep;
  rep.gamma_eps = gamma_epsilon(p.prefs, p.market.r, e.H_eps_plus);
  rep.well_posed = rep.gamma_eps > 0.0;
  rep.H = e.H;
  rep.H_eps_plus = e.H_eps_plus;
  rep.shrink = e.shrink;
  rep.merton_pi = e.merton_pi;
  rep.worst_mu = e.worst_mu;
  rep.worst_cov = e.sigma_bar;
  rep.R = p.prefs.R;
  rep.rho = p.prefs.rho;
  if (rep.well_posed) {
    rep.pi_eps = e.pi_eps;
  } else {
    rep.diagnostic = make_diagnostic(rep.gamma_eps, p.prefs.R, e.pi_eps);
  }
  return rep;
}

double FiniteHorizonReport::g(double t) const {
  const double k = k_eps;
  double integral;
  if (std::abs(k - rho) > kDegenerateOdeTol) {
    integral = (R / (k - rho)) *
               (std::exp((k - rho) * T / R) - std::exp((k - rho) * t / R));
  } else {
    integral = (T - t) * std::exp((k - rho) * t / R);
  }
  return std::pow(A, 1.0 / R) * std::exp(k * (T - t) / R) +
         std::exp(-k * t / R) * integral;
}

double FiniteHorizonReport::consumption_rate(double t) const {
  return std::exp(-rho * t / R) / g(t);
}

double FiniteHorizonReport::value_at(double w0) const {
  if (!(w0 > 0.0)) throw InputError("value_at: wealth must be positive");
  return std::pow(g(0.0), R) * std::pow(w0, 1.0 - R) / (1.0 - R);
}

FiniteHorizonReport solve_finite(const ValidatedProblem& p) {
  const auto* fin = std::get_if<FiniteHorizon>(&p.prefs.horizon);
  if (!fin) throw HorizonMismatch("solve_finite: preferences specify an infinite horizon");
  EffectiveSolve e = reduce(p);

  FiniteHorizonReport rep;
  rep.k_eps = (1.0 - p.prefs.R) *
              (p.market.r + e.H_eps_plus * e.H_eps_plus / (2.0 * p.prefs.R));
  rep.H = e.H;
  rep.H_eps_plus = e.H_eps_plus;
  rep.shrink = e.shrink;
  rep.pi_eps = e.pi_eps;
  rep.merton_pi = e.merton_pi;
  rep.worst_mu = e.worst_mu;
  rep.worst_cov = e.sigma_bar;
  rep.T = fin->T;
  rep.A = fin->A;
  rep.R = p.prefs.R;
  rep.rho = p.prefs.rho;
  return rep;
}

namespace {

// Pre-consumption log drift r + (H+)^2 (2R-1)/(2R^2); the H+ factor vanishes
// with the holding, so the formula also covers the eps >= H cutoff.
double base_log_drift(double r, double h_plus, double R) {
  return r + h_plus * h_plus * (2.0 * R - 1.0) / (2.0 * R * R);
}

VectorXd log_vol_of(const MatrixXd& cov_bar, const VectorXd& pi) {
  Eigen::LLT<MatrixXd> llt(cov_bar);
  if (llt.info() != Eigen::Success)
    throw NonSPDCovariance("optimal_wealth_law: worst covariance not positive definite");
  return MatrixXd(llt.matrixL()).transpose() * pi;
}

}  // namespace

WealthLaw optimal_wealth_law(const InfiniteHorizonReport& r, const MarketModel& market) {
  if (!r.well_posed) throw IllPosed("optimal_wealth_law: solution is ill-posed");
  WealthLaw law;
  law.log_drift = base_log_drift(market.r, r.H_eps_plus, r.R) - r.gamma_eps;
  law.log_vol = log_vol_of(r.worst_cov, r.pi_eps);
  law.consumption_drag = [](double) { return 0.0; };
  return law;
}

WealthLaw optimal_wealth_law(const FiniteHorizonReport& r, const MarketModel& market) {
  WealthLaw law;
  law.log_drift = base_log_drift(market.r, r.H_eps_plus, r.R);
  law.log_vol = log_vol_of(r.worst_cov, r.pi_eps);
  law.consumption_drag = [rep = r](double t) {
    if (t <= 0.0) return 0.0;
    return simpson([&rep](double s) { return rep.consumption_rate(s); }, 0.0, t, 10000);
  };
  return law;
}

double simpson(const std::function<double(double)>& f, double a, double b, int panels) {
  if (b == a) return 0.0;
  if (panels < 2) panels = 2;
  if (panels % 2 != 0) ++panels;
  const double h = (b - a) / panels;
  double odd = 0.0, even = 0.0;
  for (int i = 1; i < panels; i += 2) odd += f(a + i * h);
  for (int i = 2; i < panels; i += 2) even += f(a + i * h);
  return (h / 3.0) * (f(a) + f(b) + 4.0 * odd + 2.0 * even);
}

}  // namespace robmer::kernel
