#include "robmer/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "robmer/errors.hpp"
#include "robmer/frobenius.hpp"
#include "robmer/rng.hpp"

namespace robmer::io {

namespace {

std::string fmt4(double x) {
  char b[64];
  std::snprintf(b, sizeof b, "%.4f", x);
  return b;
}

// Scalars print bare, vectors and matrices as bracketed lists, so the common
// one-asset case reads as plain `name = value` lines.
std::string vec_text(const VectorXd& v, std::string (*fmt)(double)) {
  if (v.size() == 1) return fmt(v(0));
  std::string s = "[";
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += fmt(v(i));
  }
  return s + "]";
}

std::string mat_text(const MatrixXd& m, std::string (*fmt)(double)) {
  if (m.rows() == 1 && m.cols() == 1) return fmt(m(0, 0));
  std::string s = "[";
  for (int i = 0; i < m.rows(); ++i) {
    if (i) s += ", ";
    s += "[";
    for (int j = 0; j < m.cols(); ++j) {
      if (j) s += ", ";
      s += fmt(m(i, j));
    }
    s += "]";
  }
  return s + "]";
}

void expect_keys(const json& j, const char* where,
                 std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw InputError(std::string("config: unknown key '") + it.key() + "' in " + where);
  }
}

const json& require(const json& j, const char* key, const char* where) {
  const auto it = j.find(key);
  if (it == j.end())
    throw InputError(std::string("config: missing key '") + key + "' in " + where);
  return *it;
}

double as_num(const json& v, const char* key) {
  if (!v.is_number())
    throw InputError(std::string("config: '") + key + "' must be a number");
  return v.get<double>();
}

double num_field(const json& j, const char* key, const char* where) {
  return as_num(require(j, key, where), key);
}

double num_or(const json& j, const char* key, double dflt) {
  const auto it = j.find(key);
  return it == j.end() ? dflt : as_num(*it, key);
}

std::int64_t int_or(const json& j, const char* key, std::int64_t dflt) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer())
    throw InputError(std::string("config: '") + key + "' must be an integer");
  return it->get<std::int64_t>();
}

std::uint64_t uint_or(const json& j, const char* key, std::uint64_t dflt) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer() && !it->is_number_unsigned())
    throw InputError(std::string("config: '") + key + "' must be an integer");
  if (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)
    throw InputError(std::string("config: '") + key + "' must be nonnegative");
  return it->get<std::uint64_t>();
}

VectorXd vec_field(const json& j, const char* key, const char* where) {
  const json& v = require(j, key, where);
  if (!v.is_array() || v.empty())
    throw InputError(std::string("config: '") + key + "' must be a nonempty array");
  VectorXd out(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    out(static_cast<int>(i)) = as_num(v[i], key);
  return out;
}

MatrixXd mat_field(const json& j, const char* key, const char* where) {
  const json& v = require(j, key, where);
  if (!v.is_array() || v.empty())
    throw InputError(std::string("config: '") + key + "' must be a nonempty array of rows");
  const auto rows = static_cast<int>(v.size());
  if (!v[0].is_array() || v[0].empty())
    throw InputError(std::string("config: '") + key + "' rows must be nonempty arrays");
  const auto cols = static_cast<int>(v[0].size());
  MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (!v[i].is_array() || static_cast<int>(v[i].size()) != cols)
      throw InputError(std::string("config: '") + key + "' must be rectangular");
    for (int jj = 0; jj < cols; ++jj) out(i, jj) = as_num(v[i][jj], key);
  }
  return out;
}

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat_json(const MatrixXd& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

VectorXd vec_of(const json& v, const char* what) {
  if (!v.is_array())
    throw InputError(std::string("solve document: '") + what + "' must be an array");
  VectorXd out(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    out(static_cast<int>(i)) = as_num(v[i], what);
  return out;
}

MatrixXd mat_of(const json& v, const char* what) {
  if (!v.is_array() || v.empty() || !v[0].is_array())
    throw InputError(std::string("solve document: '") + what + "' must be an array of rows");
  const auto rows = static_cast<int>(v.size());
  const auto cols = static_cast<int>(v[0].size());
  MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = as_num(v[i][j], what);
  return out;
}

bool is_frobenius(const AmbiguityModel& a) {
  return std::holds_alternative<FrobeniusBall>(a.vol);
}

kernel::InfiniteHorizonReport solve_infinite_any(const ValidatedProblem& p) {
  return is_frobenius(p.ambiguity) ? frobenius::solve_infinite_frobenius(p)
                                   : kernel::solve_infinite(p);
}

// Interpolated quantile of an ascending-sorted sample.
double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.size() == 1) return v[0];
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace

ProblemConfig parse_config(const json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw InputError("config: document must be a JSON object");
  expect_keys(doc, "the top level",
              {"market", "ambiguity", "preferences", "sim", "oracle", "w0"});
  ProblemConfig cfg;

  const json& mkt = require(doc, "market", "the top level");
  if (!mkt.is_object()) throw InputError("config: 'market' must be an object");
  const bool inline_market = mkt.contains("mu_hat") || mkt.contains("cov");
  const bool estimated = mkt.contains("returns_csv") || mkt.contains("periods_per_year");
  if (inline_market == estimated)
    throw InputError(
        "config: market needs exactly one of {mu_hat, cov} or "
        "{returns_csv, periods_per_year}");
  cfg.market.r = num_field(mkt, "r", "market");
  if (inline_market) {
    expect_keys(mkt, "market", {"r", "mu_hat", "cov"});
    cfg.market.mu_hat = vec_field(mkt, "mu_hat", "market");
    cfg.market.sigma_cov = mat_field(mkt, "cov", "market");
  } else {
    expect_keys(mkt, "market", {"r", "returns_csv", "periods_per_year"});
    const json& pv = require(mkt, "returns_csv", "market");
    if (!pv.is_string()) throw InputError("config: 'returns_csv' must be a string");
    std::filesystem::path path = pv.get<std::string>();
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    const EstimatedMarket est =
        estimate_market(path.string(), num_field(mkt, "periods_per_year", "market"));
    cfg.market.mu_hat = est.mu_hat;
    cfg.market.sigma_cov = est.sigma_cov;
    cfg.asset_names = est.asset_names;
  }

  const json& amb = require(doc, "ambiguity", "the top level");
  if (!amb.is_object()) throw InputError("config: 'ambiguity' must be an object");
  expect_keys(amb, "ambiguity", {"epsilon", "vol"});
  cfg.ambiguity.epsilon = num_field(amb, "epsilon", "ambiguity");
  if (amb.contains("vol")) {
    const json& vol = amb["vol"];
    if (vol.is_string()) {
      if (vol.get<std::string>() != "none")
        throw InputError("config: 'vol' string form must be \"none\"");
    } else if (vol.is_object()) {
      expect_keys(vol, "ambiguity.vol", {"box", "cap", "frobenius"});
      if (vol.size() != 1)
        throw InputError("config: 'vol' must hold exactly one of box/cap/frobenius");
      if (vol.contains("box")) {
        const json& b = vol["box"];
        expect_keys(b, "ambiguity.vol.box", {"lower", "upper"});
        DiagonalBox box;
        box.lower = vec_field(b, "lower", "ambiguity.vol.box");
        box.upper = vec_field(b, "upper", "ambiguity.vol.box");
        cfg.ambiguity.vol = box;
      } else if (vol.contains("cap")) {
        const json& c = vol["cap"];
        expect_keys(c, "ambiguity.vol.cap", {"lambda_bar_sq"});
        cfg.ambiguity.vol = EigenvalueCap{num_field(c, "lambda_bar_sq", "ambiguity.vol.cap")};
      } else {
        const json& fj = vol["frobenius"];
        expect_keys(fj, "ambiguity.vol.frobenius", {"delta"});
        cfg.ambiguity.vol = FrobeniusBall{num_field(fj, "delta", "ambiguity.vol.frobenius")};
      }
    } else {
      throw InputError("config: 'vol' must be \"none\" or an object");
    }
  }

  const json& prefs = require(doc, "preferences", "the top level");
  if (!prefs.is_object()) throw InputError("config: 'preferences' must be an object");
  expect_keys(prefs, "preferences", {"rho", "R", "horizon"});
  cfg.prefs.rho = num_field(prefs, "rho", "preferences");
  cfg.prefs.R = num_field(prefs, "R", "preferences");
  const json& hz = require(prefs, "horizon", "preferences");
  if (hz.is_string()) {
    if (hz.get<std::string>() != "infinite")
      throw InputError("config: 'horizon' string form must be \"infinite\"");
    cfg.prefs.horizon = InfiniteHorizon{};
  } else if (hz.is_object()) {
    expect_keys(hz, "preferences.horizon", {"T", "A"});
    FiniteHorizon fh;
    fh.T = num_field(hz, "T", "preferences.horizon");
    fh.A = num_or(hz, "A", 1.0);
    cfg.prefs.horizon = fh;
  } else {
    throw InputError("config: 'horizon' must be \"infinite\" or an object {T, A}");
  }

  if (doc.contains("sim")) {
    const json& s = doc["sim"];
    if (!s.is_object()) throw InputError("config: 'sim' must be an object");
    expect_keys(s, "sim",
                {"n_paths", "dt", "t_max", "seed", "scheme", "threads", "record_stride"});
    sim::SimConfig sc;
    sc.n_paths = int_or(s, "n_paths", sc.n_paths);
    sc.dt = num_or(s, "dt", sc.dt);
    sc.t_max = num_or(s, "t_max",
                      cfg.prefs.infinite() ? sc.t_max
                                           : std::get<FiniteHorizon>(cfg.prefs.horizon).T);
    sc.seed = uint_or(s, "seed", sc.seed);
    if (s.contains("scheme")) {
      if (!s["scheme"].is_string())
        throw InputError("config: 'scheme' must be a string");
      const std::string name = s["scheme"].get<std::string>();
      if (name == "exact_log")
        sc.scheme = sim::Scheme::ExactLog;
      else if (name == "euler")
        sc.scheme = sim::Scheme::Euler;
      else
        throw InputError("config: 'scheme' must be \"exact_log\" or \"euler\"");
    }
    sc.threads = static_cast<int>(int_or(s, "threads", sc.threads));
    sc.record_stride = static_cast<int>(int_or(s, "record_stride", sc.record_stride));
    cfg.sim = sc;
  }

  if (doc.contains("oracle")) {
    const json& o = doc["oracle"];
    if (!o.is_object()) throw InputError("config: 'oracle' must be an object");
    expect_keys(o, "oracle", {"n_samples", "grid_points_per_dim", "seed", "tolerance"});
    oracle::OracleConfig oc;
    oc.n_samples = int_or(o, "n_samples", oc.n_samples);
    oc.grid_points_per_dim =
        static_cast<int>(int_or(o, "grid_points_per_dim", oc.grid_points_per_dim));
    oc.seed = uint_or(o, "seed", oc.seed);
    oc.tolerance = num_or(o, "tolerance", oc.tolerance);
    oracle::check(oc);
    cfg.oracle = oc;
  }

  cfg.w0 = num_or(doc, "w0", 1.0);
  if (!std::isfinite(cfg.w0) || cfg.w0 <= 0.0)
    throw InputError("config: 'w0' must be positive and finite");
  return cfg;
}

ProblemConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  const std::string base = std::filesystem::path(path).parent_path().string();
  return parse_config(doc, base.empty() ? "." : base);
}

EstimatedMarket estimate_market(const std::string& csv_path, double periods_per_year) {
  if (!std::isfinite(periods_per_year) || periods_per_year <= 0.0)
    throw InputError("estimate: periods_per_year must be positive and finite");
  std::ifstream in(csv_path);
  if (!in) throw IoFailure("cannot open returns file: " + csv_path);

  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (const char ch : line) {
      if (ch == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    cells.push_back(cur);
    for (auto& c : cells) {
      while (!c.empty() && (c.back() == '\r' || c.back() == ' ' || c.back() == '\t'))
        c.pop_back();
      std::size_t b = 0;
      while (b < c.size() && (c[b] == ' ' || c[b] == '\t')) ++b;
      c.erase(0, b);
    }
    return cells;
  };
  auto blank = [](const std::string& s) {
    return s.find_first_not_of(" \t\r") == std::string::npos;
  };

  std::string line;
  std::int64_t line_no = 0;
  if (!std::getline(in, line) || blank(line))
    throw MalformedCsv("returns file needs a header row of asset names", 1);
  ++line_no;
  EstimatedMarket out;
  out.asset_names = split(line);
  const int n = static_cast<int>(out.asset_names.size());
  for (const auto& name : out.asset_names)
    if (name.empty()) throw MalformedCsv("empty column name in header", line_no);

  std::vector<VectorXd> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto cells = split(line);
    if (static_cast<int>(cells.size()) != n)
      throw MalformedCsv("expected " + std::to_string(n) + " cells, found " +
                             std::to_string(cells.size()),
                         line_no);
    VectorXd row(n);
    for (int j = 0; j < n; ++j) {
      const std::string& c = cells[static_cast<std::size_t>(j)];
      if (c.empty()) throw MalformedCsv("empty cell", line_no);
      char* end = nullptr;
      const double x = std::strtod(c.c_str(), &end);
      if (end != c.c_str() + c.size() || !std::isfinite(x))
        throw MalformedCsv("non-numeric cell '" + c + "'", line_no);
      row(j) = x;
    }
    rows.push_back(std::move(row));
  }
  out.n_rows = static_cast<std::int64_t>(rows.size());
  if (out.n_rows < n + 2)
    throw DegenerateSample("estimate: need at least " + std::to_string(n + 2) +
                           " return rows for " + std::to_string(n) + " assets, found " +
                           std::to_string(out.n_rows));

  VectorXd mean = VectorXd::Zero(n);
  for (const auto& row : rows) mean += row;
  mean /= static_cast<double>(out.n_rows);
  MatrixXd cov = MatrixXd::Zero(n, n);
  for (const auto& row : rows) {
    const VectorXd d = row - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(out.n_rows - 1);

  // Simple per-period arithmetic returns, annualized linearly.
  out.mu_hat = periods_per_year * mean;
  out.sigma_cov = periods_per_year * cov;
  // Constant or collinear columns leave only rounding noise in some
  // directions, so singularity has to be judged against the second-moment
  // scale of the data, not against exact zero.
  double m2 = 0.0;
  for (const auto& row : rows) m2 += row.squaredNorm();
  m2 /= static_cast<double>(out.n_rows);
  const double noise_floor = 1e-12 * periods_per_year * m2;
  const Eigen::SelfAdjointEigenSolver<MatrixXd> es(out.sigma_cov);
  if (es.eigenvalues().minCoeff() <= noise_floor)
    throw DegenerateSample("estimate: sample covariance is singular or indefinite");
  Eigen::LLT<MatrixXd> chol(out.sigma_cov);
  if (chol.info() != Eigen::Success)
    throw DegenerateSample("estimate: sample covariance is singular or indefinite");
  return out;
}

std::string fmt17(double x) {
  char b[64];
  std::snprintf(b, sizeof b, "%.17g", x);
  return b;
}

json report_to_json(const kernel::InfiniteHorizonReport& r, double w0) {
  json j;
  j["horizon"] = "infinite";
  j["well_posed"] = r.well_posed;
  j["gamma_eps"] = r.gamma_eps;
  j["H"] = r.H;
  j["H_eps_plus"] = r.H_eps_plus;
  j["shrink"] = r.shrink;
  j["merton_pi"] = vec_json(r.merton_pi);
  j["worst_mu"] = vec_json(r.worst_mu);
  j["worst_cov"] = mat_json(r.worst_cov);
  j["R"] = r.R;
  j["rho"] = r.rho;
  j["w0"] = w0;
  if (r.well_posed) {
    j["pi_eps"] = vec_json(r.pi_eps);
    j["value"] = r.value_at(w0);
  } else {
    // JSON has no literal for infinities; the divergence direction is a tag.
    j["value_divergence"] = r.R < 1.0 ? "+inf" : "-inf";
    if (r.diagnostic) {
      json d;
      d["witness_pi"] = vec_json(r.diagnostic->witness_pi);
      d["witness_lambda"] = r.diagnostic->witness_lambda;
      d["divergence_exponent"] = r.diagnostic->divergence_exponent;
      d["note"] = r.diagnostic->note;
      j["diagnostic"] = d;
    }
  }
  return j;
}

json report_to_json(const kernel::FiniteHorizonReport& r, double w0) {
  json j;
  j["horizon"] = "finite";
  j["T"] = r.T;
  j["A"] = r.A;
  j["k_eps"] = r.k_eps;
  j["H"] = r.H;
  j["H_eps_plus"] = r.H_eps_plus;
  j["shrink"] = r.shrink;
  j["pi_eps"] = vec_json(r.pi_eps);
  j["merton_pi"] = vec_json(r.merton_pi);
  j["worst_mu"] = vec_json(r.worst_mu);
  j["worst_cov"] = mat_json(r.worst_cov);
  j["R"] = r.R;
  j["rho"] = r.rho;
  j["g0"] = r.g(0.0);
  j["w0"] = w0;
  j["value"] = r.value_at(w0);
  return j;
}

kernel::InfiniteHorizonReport infinite_report_from_json(const json& j) {
  if (!j.is_object() || require(j, "horizon", "solve document") != "infinite")
    throw InputError("solve document: not an infinite-horizon report");
  kernel::InfiniteHorizonReport r;
  const json& wp = require(j, "well_posed", "solve document");
  if (!wp.is_boolean()) throw InputError("solve document: 'well_posed' must be boolean");
  r.well_posed = wp.get<bool>();
  r.gamma_eps = num_field(j, "gamma_eps", "solve document");
  r.H = num_field(j, "H", "solve document");
  r.H_eps_plus = num_field(j, "H_eps_plus", "solve document");
  r.shrink = num_field(j, "shrink", "solve document");
  r.merton_pi = vec_of(require(j, "merton_pi", "solve document"), "merton_pi");
  r.worst_mu = vec_of(require(j, "worst_mu", "solve document"), "worst_mu");
  r.worst_cov = mat_of(require(j, "worst_cov", "solve document"), "worst_cov");
  r.R = num_field(j, "R", "solve document");
  r.rho = num_field(j, "rho", "solve document");
  if (j.contains("pi_eps")) r.pi_eps = vec_of(j["pi_eps"], "pi_eps");
  if (j.contains("diagnostic")) {
    const json& d = j["diagnostic"];
    kernel::IllPosedDiagnostic diag;
    diag.witness_pi = vec_of(require(d, "witness_pi", "diagnostic"), "witness_pi");
    diag.witness_lambda = num_field(d, "witness_lambda", "diagnostic");
    diag.divergence_exponent = num_field(d, "divergence_exponent", "diagnostic");
    diag.note = require(d, "note", "diagnostic").get<std::string>();
    r.diagnostic = diag;
  }
  return r;
}

kernel::FiniteHorizonReport finite_report_from_json(const json& j) {
  if (!j.is_object() || require(j, "horizon", "solve document") != "finite")
    throw InputError("solve document: not a finite-horizon report");
  kernel::FiniteHorizonReport r;
  r.T = num_field(j, "T", "solve document");
  r.A = num_field(j, "A", "solve document");
  r.k_eps = num_field(j, "k_eps", "solve document");
  r.H = num_field(j, "H", "solve document");
  r.H_eps_plus = num_field(j, "H_eps_plus", "solve document");
  r.shrink = num_field(j, "shrink", "solve document");
  r.pi_eps = vec_of(require(j, "pi_eps", "solve document"), "pi_eps");
  r.merton_pi = vec_of(require(j, "merton_pi", "solve document"), "merton_pi");
  r.worst_mu = vec_of(require(j, "worst_mu", "solve document"), "worst_mu");
  r.worst_cov = mat_of(require(j, "worst_cov", "solve document"), "worst_cov");
  r.R = num_field(j, "R", "solve document");
  r.rho = num_field(j, "rho", "solve document");
  return r;
}

namespace {

void print_text(std::ostream& out, const kernel::InfiniteHorizonReport& r, double w0) {
  out << "horizon = infinite\n"
      << "well_posed = " << (r.well_posed ? "true" : "false") << "\n"
      << "H = " << fmt4(r.H) << "\n"
      << "H_eps_plus = " << fmt4(r.H_eps_plus) << "\n"
      << "shrink = " << fmt4(r.shrink) << "\n";
  if (r.well_posed) out << "pi = " << vec_text(r.pi_eps, fmt4) << "\n";
  out << "merton_pi = " << vec_text(r.merton_pi, fmt4) << "\n"
      << "gamma_eps = " << fmt4(r.gamma_eps) << "\n"
      << "worst_mu = " << vec_text(r.worst_mu, fmt4) << "\n"
      << "worst_cov = " << mat_text(r.worst_cov, fmt4) << "\n"
      << "w0 = " << fmt4(w0) << "\n"
      << "value = " << fmt4(r.value_at(w0)) << "\n";
  if (!r.well_posed && r.diagnostic) {
    out << "note = " << r.diagnostic->note << "\n";
    if (r.diagnostic->witness_pi.size() > 0)
      out << "witness_pi = " << vec_text(r.diagnostic->witness_pi, fmt4) << "\n";
    out << "witness_lambda = " << fmt4(r.diagnostic->witness_lambda) << "\n"
        << "divergence_exponent = " << fmt4(r.diagnostic->divergence_exponent) << "\n";
  }
}

void print_text(std::ostream& out, const kernel::FiniteHorizonReport& r, double w0) {
  out << "horizon = finite\n"
      << "well_posed = true\n"
      << "T = " << fmt4(r.T) << "\n"
      << "A = " << fmt4(r.A) << "\n"
      << "H = " << fmt4(r.H) << "\n"
      << "H_eps_plus = " << fmt4(r.H_eps_plus) << "\n"
      << "shrink = " << fmt4(r.shrink) << "\n"
      << "pi = " << vec_text(r.pi_eps, fmt4) << "\n"
      << "merton_pi = " << vec_text(r.merton_pi, fmt4) << "\n"
      << "k_eps = " << fmt4(r.k_eps) << "\n"
      << "g0 = " << fmt4(r.g(0.0)) << "\n"
      << "rate0 = " << fmt4(r.consumption_rate(0.0)) << "\n"
      << "worst_mu = " << vec_text(r.worst_mu, fmt4) << "\n"
      << "worst_cov = " << mat_text(r.worst_cov, fmt4) << "\n"
      << "w0 = " << fmt4(w0) << "\n"
      << "value = " << fmt4(r.value_at(w0)) << "\n";
}

}  // namespace

int cmd_solve(const ProblemConfig& cfg, const std::string& format, std::ostream& out) {
  if (format != "text" && format != "json" && format != "csv")
    throw InputError("solve: format must be text, json or csv");
  const ValidatedProblem p = validate(cfg.market, cfg.ambiguity, cfg.prefs);
  if (cfg.prefs.infinite()) {
    const kernel::InfiniteHorizonReport rep = solve_infinite_any(p);
    if (format == "json") {
      out << report_to_json(rep, cfg.w0).dump(2) << "\n";
    } else if (format == "csv") {
      out << "epsilon,pi_norm,shrink,gamma_eps,value,well_posed\n"
          << fmt17(cfg.ambiguity.epsilon) << ","
          << (rep.well_posed ? fmt17(rep.pi_eps.norm()) : "nan") << ","
          << fmt17(rep.shrink) << "," << fmt17(rep.gamma_eps) << ","
          << fmt17(rep.value_at(cfg.w0)) << ","
          << (rep.well_posed ? "true" : "false") << "\n";
    } else {
      print_text(out, rep, cfg.w0);
    }
    return rep.well_posed ? 0 : 2;
  }
  if (is_frobenius(cfg.ambiguity))
    throw InputError("solve: the frobenius vol variant supports the infinite horizon only");
  const kernel::FiniteHorizonReport rep = kernel::solve_finite(p);
  if (format == "json") {
    out << report_to_json(rep, cfg.w0).dump(2) << "\n";
  } else if (format == "csv") {
    out << "epsilon,pi_norm,shrink,k_eps,g0,value\n"
        << fmt17(cfg.ambiguity.epsilon) << "," << fmt17(rep.pi_eps.norm()) << ","
        << fmt17(rep.shrink) << "," << fmt17(rep.k_eps) << "," << fmt17(rep.g(0.0))
        << "," << fmt17(rep.value_at(cfg.w0)) << "\n";
  } else {
    print_text(out, rep, cfg.w0);
  }
  return 0;
}

int cmd_sweep(const ProblemConfig& cfg, const std::string& param, double from, double to,
              int points, const std::string& out_path, std::ostream& log) {
  if (param != "epsilon" && param != "delta")
    throw InputError("sweep: param must be epsilon or delta");
  if (!std::isfinite(from) || !std::isfinite(to) || from > to)
    throw InputError("sweep: need finite from <= to");
  if (points < 2) throw InputError("sweep: need at least 2 points");
  if (!cfg.prefs.infinite())
    throw InputError("sweep: infinite-horizon configs only");
  if (param == "delta" && !is_frobenius(cfg.ambiguity))
    throw InputError("sweep: delta sweeps need the frobenius vol variant");

  std::vector<std::string> rows;
  rows.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double x =
        from + (to - from) * static_cast<double>(i) / static_cast<double>(points - 1);
    ProblemConfig c = cfg;
    if (param == "epsilon")
      c.ambiguity.epsilon = x;
    else
      std::get<FrobeniusBall>(c.ambiguity.vol).delta = x;
    const ValidatedProblem p = validate(c.market, c.ambiguity, c.prefs);
    const kernel::InfiniteHorizonReport rep = solve_infinite_any(p);
    rows.push_back(fmt17(x) + "," +
                   (rep.well_posed ? fmt17(rep.pi_eps.norm()) : "nan") + "," +
                   fmt17(rep.shrink) + "," + fmt17(rep.gamma_eps) + "," +
                   fmt17(rep.value_at(cfg.w0)) + "," +
                   (rep.well_posed ? "true" : "false"));
  }

  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw IoFailure("sweep: cannot open output file " + out_path);
  f << param << ",pi_norm,shrink,gamma_eps,value,well_posed\n";
  for (const auto& row : rows) f << row << "\n";
  f.flush();
  if (!f.good()) throw IoFailure("sweep: write failed for " + out_path);
  log << "sweep: wrote " << points << " rows to " << out_path << "\n";
  return 0;
}

namespace {

struct CheckTally {
  std::ostream& out;
  bool all_pass = true;

  void line(bool pass, const char* name, double observed, double tolerance) {
    if (!pass) all_pass = false;
    out << (pass ? "PASS " : "FAIL ") << name << ": observed " << fmt17(observed)
        << ", tolerance " << fmt17(tolerance) << "\n";
  }
};

}  // namespace

int cmd_verify(const ProblemConfig& cfg, const std::optional<VectorXd>& override_pi,
               std::ostream& out) {
  const ValidatedProblem p = validate(cfg.market, cfg.ambiguity, cfg.prefs);
  if (!cfg.prefs.infinite() && is_frobenius(cfg.ambiguity))
    throw InputError("verify: the frobenius vol variant supports the infinite horizon only");
  oracle::OracleConfig oc;
  if (cfg.oracle) oc = *cfg.oracle;
  oracle::check(oc);
  const double tol = oc.tolerance;
  const double eps = cfg.ambiguity.epsilon;
  CheckTally t{out};

  // Pieces shared by both horizons: the rule under judgment, its worst-case
  // covariance and the set-minimization cross-checks.
  auto set_checks = [&](const VectorXd& pi, const MatrixXd& sigma_bar) {
    const VectorXd mu_bar = kernel::worst_case_drift(pi, sigma_bar, eps, p.market.mu_hat);
    const double closed_drift = pi.dot(mu_bar);
    const auto drift_scale = std::max(1.0, std::abs(closed_drift));
    const auto sampled = oracle::ellipsoid_min_sampled(pi, sigma_bar, eps, p.market.mu_hat, oc);
    t.line(std::abs(closed_drift - sampled.value) <= tol * drift_scale &&
               sampled.value >= closed_drift - 1e-9 * drift_scale,
           "ellipsoid-min", std::abs(closed_drift - sampled.value), tol * drift_scale);

    const double y = std::max(pi.dot(sigma_bar * pi), 0.0);
    const double closed_vol = -(eps * std::sqrt(y) + 0.5 * p.prefs.R * y);
    const auto vol_scale = std::max(1.0, std::abs(closed_vol));
    const auto vs = oracle::volset_min_sampled(pi, p, oc);
    t.line(std::abs(closed_vol - vs.value) <= tol * vol_scale, "volset-min",
           std::abs(closed_vol - vs.value), tol * vol_scale);
  };

  if (cfg.prefs.infinite()) {
    const kernel::InfiniteHorizonReport rep = solve_infinite_any(p);
    if (!rep.well_posed) {
      out << "ill-posed: gamma_eps = " << fmt17(rep.gamma_eps) << " <= 0\n";
      if (rep.diagnostic) {
        out << "note = " << rep.diagnostic->note << "\n";
        if (rep.diagnostic->witness_pi.size() > 0)
          out << "witness_pi = " << vec_text(rep.diagnostic->witness_pi, fmt17) << "\n";
        out << "witness_lambda = " << fmt17(rep.diagnostic->witness_lambda) << "\n"
            << "divergence_exponent = " << fmt17(rep.diagnostic->divergence_exponent)
            << "\n";
      }
      return 2;
    }

    VectorXd pi = rep.pi_eps;
    if (override_pi) {
      pi = *override_pi;
      if (pi.size() != p.market.n())
        throw InputError("verify: override pi has the wrong dimension");
      out << "override: judging pi = " << vec_text(pi, fmt17) << "\n";
    }
    MatrixXd sigma_bar;
    if (is_frobenius(p.ambiguity))
      sigma_bar = pi.isZero(0.0) ? p.market.sigma_cov
                                 : frobenius::worst_cov_frobenius(p, pi).sigma_bar;
    else
      sigma_bar = kernel::worst_case_cov(p.market, p.ambiguity);

    set_checks(pi, sigma_bar);

    // HJB residual of the candidate rule on a (t, w) grid: zero at the
    // optimum, strictly negative at corrupted rules.
    {
      double worst_signed = 0.0;
      double worst_fd = 0.0;
      for (int it = 0; it < 5; ++it) {
        for (int iw = 0; iw < 5; ++iw) {
          const double tt = 2.5 * it;
          const double ww = 0.25 * std::pow(2.0, iw);
          const auto res = oracle::hjb_residual(rep.gamma_eps, tt, ww,
                                                (pi * ww).eval(),
                                                rep.gamma_eps * ww, p);
          const double rel = res.analytic / res.scale;
          if (std::abs(rel) > std::abs(worst_signed)) worst_signed = rel;
          worst_fd = std::max(worst_fd,
                              std::abs(res.analytic - res.finite_diff) / res.scale);
        }
      }
      t.line(std::abs(worst_signed) <= 1e-9, "hjb-zero", worst_signed, 1e-9);
      t.line(worst_fd <= tol, "hjb-fd", worst_fd, tol);
    }

    // Perturbed controls must never beat the HJB certificate.
    {
      double worst = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < 200; ++k) {
        const auto uv = rng::uniform2(oc.seed, static_cast<std::uint64_t>(k), 100, 0);
        const double du = 0.2 * (uv[0] - 0.5);
        const double dv = 0.2 * (uv[1] - 0.5);
        const auto res = oracle::hjb_residual(rep.gamma_eps, 1.0, 1.0,
                                              (pi * (1.0 + du)).eval(),
                                              rep.gamma_eps * (1.0 + dv), p);
        worst = std::max(worst, res.analytic / res.scale);
      }
      t.line(worst <= 1e-9, "hjb-max", worst, 1e-9);
    }

    {
      const auto g = oracle::minimax_gap(p, cfg.w0, oc);
      const double scale = std::max(1.0, std::abs(g.lower));
      t.line(g.gap >= -1e-9 * scale && g.gap <= tol * scale, "minimax-gap", g.gap,
             tol * scale);
    }

    if (cfg.sim && !override_pi) {
      const sim::Controls ctl = sim::controls_of(rep);
      const sim::Measure msr{rep.worst_mu, rep.worst_cov, "worst"};
      const auto ens = sim::simulate(p.market, ctl, msr, p.prefs, *cfg.sim, cfg.w0);
      const auto est = sim::realized_utility(ens, p.prefs);
      const double target = rep.value_at(cfg.w0);
      const double got = est.estimate + est.tail_bound;
      const double band = 3.0 * est.std_error + 1e-12 * std::abs(target);
      t.line(std::isfinite(got) && std::abs(got - target) <= band, "mc-value",
             got - target, band);
    } else if (cfg.sim && override_pi) {
      out << "skip mc-value: override pi in effect\n";
    }
    return t.all_pass ? 0 : 2;
  }

  const kernel::FiniteHorizonReport rep = kernel::solve_finite(p);
  VectorXd pi = rep.pi_eps;
  if (override_pi) {
    pi = *override_pi;
    if (pi.size() != p.market.n())
      throw InputError("verify: override pi has the wrong dimension");
    out << "override: judging pi = " << vec_text(pi, fmt17) << "\n";
  }
  set_checks(pi, rep.worst_cov);

  // Consumption-scaling ODE: f = g^R against a finite-difference derivative.
  {
    const double R = p.prefs.R;
    const double rho = p.prefs.rho;
    auto f = [&](double tt) { return std::pow(rep.g(tt), R); };
    double worst = 0.0;
    for (int i = 0; i <= 100; ++i) {
      const double tt = rep.T * static_cast<double>(i) / 100.0;
      const double h = 1e-5 * std::max(1.0, std::abs(tt));
      const double fd = (f(tt + h) - f(tt - h)) / (2.0 * h);
      const double resid = fd + rep.k_eps * f(tt) +
                           R * std::exp(-rho * tt / R) * std::pow(f(tt), (R - 1.0) / R);
      worst = std::max(worst, std::abs(resid));
    }
    t.line(worst <= 1e-8, "ode-residual", worst, 1e-8);
  }
  {
    const double target = std::pow(rep.A, 1.0 / p.prefs.R);
    const double diff = std::abs(rep.g(rep.T) - target);
    const double band = 1e-12 * std::max(1.0, target);
    t.line(diff <= band, "g-boundary", diff, band);
  }

  if (cfg.sim && !override_pi) {
    sim::SimConfig sc = *cfg.sim;
    sc.t_max = rep.T;
    const sim::Controls ctl = sim::controls_of(rep);
    const sim::Measure msr{rep.worst_mu, rep.worst_cov, "worst"};
    const auto ens = sim::simulate(p.market, ctl, msr, p.prefs, sc, cfg.w0);
    const auto est = sim::realized_utility(ens, p.prefs);
    const double target = rep.value_at(cfg.w0);
    const double band = 3.0 * est.std_error + 1e-12 * std::abs(target);
    t.line(std::abs(est.estimate - target) <= band, "mc-value", est.estimate - target,
           band);
  } else if (cfg.sim && override_pi) {
    out << "skip mc-value: override pi in effect\n";
  }
  return t.all_pass ? 0 : 2;
}

int cmd_simulate(const ProblemConfig& cfg, const std::string& measure_spec,
                 const std::string& out_csv, const std::string& paths_out,
                 std::ostream& log) {
  if (!cfg.sim) throw InputError("simulate: sim config required");
  const ValidatedProblem p = validate(cfg.market, cfg.ambiguity, cfg.prefs);
  if (!cfg.prefs.infinite() && is_frobenius(cfg.ambiguity))
    throw InputError("simulate: the frobenius vol variant supports the infinite horizon only");

  sim::SimConfig sc = *cfg.sim;
  sim::Controls ctl;
  VectorXd worst_mu;
  MatrixXd worst_cov;
  if (cfg.prefs.infinite()) {
    const kernel::InfiniteHorizonReport rep = solve_infinite_any(p);
    if (!rep.well_posed) {
      log << "ill-posed: gamma_eps = " << fmt17(rep.gamma_eps) << " <= 0";
      if (rep.diagnostic) log << " (" << rep.diagnostic->note << ")";
      log << "\n";
      return 2;
    }
    ctl = sim::controls_of(rep);
    worst_mu = rep.worst_mu;
    worst_cov = rep.worst_cov;
  } else {
    const kernel::FiniteHorizonReport rep = kernel::solve_finite(p);
    ctl = sim::controls_of(rep);
    worst_mu = rep.worst_mu;
    worst_cov = rep.worst_cov;
    if (std::abs(sc.t_max - rep.T) > 1e-9 * std::max(1.0, rep.T)) {
      log << "simulate: t_max pinned to the horizon T = " << fmt17(rep.T) << "\n";
      sc.t_max = rep.T;
    }
  }

  sim::Measure msr;
  if (measure_spec == "nominal") {
    msr = {p.market.mu_hat, p.market.sigma_cov, "nominal"};
  } else if (measure_spec == "worst") {
    msr = {worst_mu, worst_cov, "worst"};
  } else {
    std::ifstream in(measure_spec);
    if (!in) throw IoFailure("simulate: cannot open measure file " + measure_spec);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InputError(std::string("measure file: ") + e.what());
    }
    if (!doc.is_object()) throw InputError("measure file: must be a JSON object");
    expect_keys(doc, "the measure file", {"mu", "cov"});
    msr.mu = vec_field(doc, "mu", "the measure file");
    msr.cov = mat_field(doc, "cov", "the measure file");
    msr.tag = measure_spec;
  }

  const sim::PathEnsemble ens = sim::simulate(p.market, ctl, msr, p.prefs, sc, cfg.w0);
  const sim::UtilityEstimate est = sim::realized_utility(ens, p.prefs);

  std::vector<std::int64_t> keep;
  keep.reserve(static_cast<std::size_t>(ens.wealth.rows()));
  for (std::int64_t q = 0; q < ens.wealth.rows(); ++q)
    if (!ens.flagged[static_cast<std::size_t>(q)]) keep.push_back(q);

  std::ostringstream csv;
  csv << "# measure=" << msr.tag << " realized_utility estimate=" << fmt17(est.estimate)
      << " std_error=" << fmt17(est.std_error)
      << " tail_bound=" << fmt17(est.tail_bound) << " n_used=" << est.n_used
      << " violations=" << ens.n_violations << "\n";
  csv << "time,q05,q25,q50,q75,q95,mean\n";
  std::vector<double> col(keep.size());
  for (std::int64_t j = 0; j < ens.times.size(); ++j) {
    for (std::size_t i = 0; i < keep.size(); ++i)
      col[i] = ens.wealth(keep[i], j);
    const double mean = sim::pairwise_sum(col.data(), static_cast<std::int64_t>(col.size())) /
                        static_cast<double>(col.size());
    std::sort(col.begin(), col.end());
    csv << fmt17(ens.times(j)) << "," << fmt17(quantile_sorted(col, 0.05)) << ","
        << fmt17(quantile_sorted(col, 0.25)) << "," << fmt17(quantile_sorted(col, 0.50))
        << "," << fmt17(quantile_sorted(col, 0.75)) << ","
        << fmt17(quantile_sorted(col, 0.95)) << "," << fmt17(mean) << "\n";
  }

  if (out_csv.empty()) {
    log << csv.str();
  } else {
    std::ofstream f(out_csv, std::ios::binary);
    if (!f) throw IoFailure("simulate: cannot open output file " + out_csv);
    f << csv.str();
    f.flush();
    if (!f.good()) throw IoFailure("simulate: write failed for " + out_csv);
    log << "simulate: wrote " << out_csv << "\n";
  }
  if (!paths_out.empty()) {
    write_paths_binary(paths_out, ens);
    log << "simulate: wrote " << paths_out << "\n";
  }
  return 0;
}

namespace {

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& b, double x) {
  std::uint64_t u;
  std::memcpy(&u, &x, sizeof u);
  put_u64(b, u);
}

std::uint32_t get_u32(const unsigned char* b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(const unsigned char* b) {
  const std::uint64_t u = get_u64(b);
  double x;
  std::memcpy(&x, &u, sizeof x);
  return x;
}

}  // namespace

void write_paths_binary(const std::string& path, const sim::PathEnsemble& e) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open paths file for writing: " + path);
  const auto n_paths = static_cast<std::uint64_t>(e.wealth.rows());
  const auto n_times = static_cast<std::uint64_t>(e.times.size());

  std::string buf;
  buf.reserve(64 + 8 * n_times);
  buf.append("RMPE", 4);
  put_u32(buf, 1);
  put_u64(buf, n_paths);
  put_u64(buf, n_times);
  put_u64(buf, e.seed);
  for (std::int64_t j = 0; j < e.times.size(); ++j) put_f64(buf, e.times(j));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));

  for (std::int64_t pth = 0; pth < e.wealth.rows(); ++pth) {
    buf.clear();
    for (std::int64_t j = 0; j < e.wealth.cols(); ++j) put_f64(buf, e.wealth(pth, j));
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  for (std::int64_t pth = 0; pth < e.consumption.rows(); ++pth) {
    buf.clear();
    for (std::int64_t j = 0; j < e.consumption.cols(); ++j)
      put_f64(buf, e.consumption(pth, j));
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  f.flush();
  if (!f.good()) throw IoFailure("write failed: " + path);
}

PathsFile read_paths_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open paths file: " + path);
  const std::string data((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
  const auto* b = reinterpret_cast<const unsigned char*>(data.data());
  if (data.size() < 32 || std::memcmp(data.data(), "RMPE", 4) != 0)
    throw IoFailure("not a path-ensemble (RMPE) file: " + path);
  if (get_u32(b + 4) != 1)
    throw IoFailure("unsupported path-ensemble version in " + path);

  PathsFile out;
  out.n_paths = get_u64(b + 8);
  out.n_times = get_u64(b + 16);
  out.seed = get_u64(b + 24);
  if (out.n_paths > (1u << 30) || out.n_times > (1u << 30))
    throw IoFailure("implausible dimensions in " + path);
  const std::uint64_t expected =
      32 + 8 * (out.n_times + 2 * out.n_paths * out.n_times);
  if (data.size() != expected)
    throw IoFailure("truncated or oversized path-ensemble file: " + path);

  const auto np = static_cast<std::int64_t>(out.n_paths);
  const auto nt = static_cast<std::int64_t>(out.n_times);
  out.times.resize(nt);
  std::uint64_t off = 32;
  for (std::int64_t j = 0; j < nt; ++j, off += 8) out.times(j) = get_f64(b + off);
  out.wealth.resize(np, nt);
  for (std::int64_t pth = 0; pth < np; ++pth)
    for (std::int64_t j = 0; j < nt; ++j, off += 8)
      out.wealth(pth, j) = get_f64(b + off);
  out.consumption.resize(np, nt);
  for (std::int64_t pth = 0; pth < np; ++pth)
    for (std::int64_t j = 0; j < nt; ++j, off += 8)
      out.consumption(pth, j) = get_f64(b + off);
  return out;
}

}  // namespace robmer::io
