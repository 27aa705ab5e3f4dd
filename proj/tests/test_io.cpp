#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "robmer/errors.hpp"
#include "robmer/io.hpp"
#include "robmer/rng.hpp"

using namespace robmer;
using robmer::io::json;

namespace {

std::filesystem::path scratch_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "robmer_io_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto path = scratch_dir() / name;
  std::ofstream f(path, std::ios::binary);
  f << text;
  return path.string();
}

json base_doc(double eps = 0.1) {
  json doc;
  doc["market"] = {{"r", 0.02}, {"mu_hat", {0.08}}, {"cov", {{0.04}}}};
  doc["ambiguity"] = {{"epsilon", eps}};
  doc["preferences"] = {{"rho", 0.05}, {"R", 2.0}, {"horizon", "infinite"}};
  return doc;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

// First "name=value" occurrence in a summary comment line.
double comment_value(const std::string& line, const std::string& key) {
  const auto pos = line.find(key + "=");
  REQUIRE(pos != std::string::npos);
  return std::strtod(line.c_str() + pos + key.size() + 1, nullptr);
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("config parses inline market, variants and optional blocks") {
  json doc = base_doc();
  doc["ambiguity"]["vol"] = {{"frobenius", {{"delta", 0.01}}}};
  doc["sim"] = {{"n_paths", 500}, {"dt", 0.01}, {"t_max", 20.0}, {"seed", 9},
                {"scheme", "euler"}, {"threads", 2}};
  doc["oracle"] = {{"n_samples", 2000}, {"seed", 3}};
  doc["w0"] = 2.5;
  const io::ProblemConfig cfg = io::parse_config(doc);
  CHECK(cfg.market.r == 0.02);
  CHECK(cfg.market.mu_hat(0) == 0.08);
  CHECK(std::holds_alternative<FrobeniusBall>(cfg.ambiguity.vol));
  CHECK(cfg.prefs.infinite());
  REQUIRE(cfg.sim.has_value());
  CHECK(cfg.sim->n_paths == 500);
  CHECK(cfg.sim->scheme == sim::Scheme::Euler);
  CHECK(cfg.sim->threads == 2);
  REQUIRE(cfg.oracle.has_value());
  CHECK(cfg.oracle->n_samples == 2000);
  CHECK(cfg.w0 == 2.5);

  json fin = base_doc();
  fin["preferences"]["horizon"] = {{"T", 3.0}, {"A", 0.5}};
  fin["ambiguity"]["vol"] = "none";
  const io::ProblemConfig fcfg = io::parse_config(fin);
  REQUIRE_FALSE(fcfg.prefs.infinite());
  CHECK(std::get<FiniteHorizon>(fcfg.prefs.horizon).T == 3.0);
  CHECK(std::get<FiniteHorizon>(fcfg.prefs.horizon).A == 0.5);
  CHECK(std::holds_alternative<std::monostate>(fcfg.ambiguity.vol));
}

TEST_CASE("config rejects unknown keys and malformed blocks") {
  json doc = base_doc();
  doc["market"]["volatility"] = 0.2;
  CHECK_THROWS_WITH_AS(io::parse_config(doc), doctest::Contains("volatility"), InputError);

  doc = base_doc();
  doc["surprise"] = 1;
  CHECK_THROWS_AS(io::parse_config(doc), InputError);

  doc = base_doc();
  doc["ambiguity"]["vol"] = {{"box", {{"lower", {0.01}}, {"upper", {0.05}}}},
                             {"cap", {{"lambda_bar_sq", 0.05}}}};
  CHECK_THROWS_AS(io::parse_config(doc), InputError);  // two variants at once

  doc = base_doc();
  doc["ambiguity"]["vol"] = "all";
  CHECK_THROWS_AS(io::parse_config(doc), InputError);

  doc = base_doc();
  doc["preferences"]["horizon"] = 7;
  CHECK_THROWS_AS(io::parse_config(doc), InputError);

  doc = base_doc();
  doc["market"].erase("cov");
  CHECK_THROWS_AS(io::parse_config(doc), InputError);

  doc = base_doc();
  doc["w0"] = -1.0;
  CHECK_THROWS_AS(io::parse_config(doc), InputError);
}

TEST_CASE("load_config resolves a returns file relative to the config") {
  // Per-period simple returns at 252 periods/year with known moments.
  std::ostringstream csv;
  csv << "fund_a\n";
  const double m0 = 0.06 / 252.0;
  const double s0 = 0.2 / std::sqrt(252.0);
  const int rows = 20000;
  for (int i = 0; i < rows; ++i)
    csv << io::fmt17(m0 + s0 * rng::normal2(77, static_cast<std::uint64_t>(i), 0, 0)[0])
        << "\n";
  write_file("returns.csv", csv.str());
  const std::string cfg_path = write_file("estimated.json", R"({
    "market": { "r": 0.02, "returns_csv": "returns.csv", "periods_per_year": 252 },
    "ambiguity": { "epsilon": 0.1 },
    "preferences": { "rho": 0.05, "R": 2.0, "horizon": "infinite" }
  })");
  const io::ProblemConfig cfg = io::load_config(cfg_path);
  REQUIRE(cfg.asset_names.size() == 1);
  CHECK(cfg.asset_names[0] == "fund_a");
  // 4 standard errors: se(mu) = 252 s0 / sqrt(n), se(var) ~ var sqrt(2/n).
  CHECK(std::abs(cfg.market.mu_hat(0) - 0.06) <= 4.0 * 252.0 * s0 / std::sqrt(1.0 * rows));
  CHECK(cfg.market.sigma_cov(0, 0) ==
        doctest::Approx(0.04).epsilon(4.0 * std::sqrt(2.0 / rows)));
}

TEST_CASE("estimate_market failure modes carry line numbers") {
  const std::string bad_cell =
      write_file("bad_cell.csv", "a,b\n0.01,0.02\n0.01,oops\n0.02,0.01\n");
  try {
    io::estimate_market(bad_cell, 252.0);
    FAIL("expected MalformedCsv");
  } catch (const MalformedCsv& e) {
    CHECK(e.line_number == 3);
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }

  const std::string ragged = write_file("short_row.csv", "a,b\n0.01,0.02\n0.03\n");
  CHECK_THROWS_AS(io::estimate_market(ragged, 252.0), MalformedCsv);

  // Too few rows for the asset count.
  const std::string few = write_file(
      "few_rows.csv", "a,b,c,d\n1,2,3,4\n1,2,3,4\n1,2,3,4\n");
  CHECK_THROWS_AS(io::estimate_market(few, 252.0), DegenerateSample);

  // Constant returns: singular sample covariance.
  std::ostringstream cc;
  cc << "a\n";
  for (int i = 0; i < 50; ++i) cc << "0.01\n";
  CHECK_THROWS_AS(io::estimate_market(write_file("const.csv", cc.str()), 252.0),
                  DegenerateSample);

  CHECK_THROWS_AS(io::estimate_market(write_file("r.csv", "a\n0.1\n0.2\n0.3\n"), 0.0),
                  InputError);
  CHECK_THROWS_AS(io::estimate_market((scratch_dir() / "absent.csv").string(), 252.0),
                  IoFailure);
}

TEST_CASE("solve reports round-trip through json field for field") {
  const io::ProblemConfig cfg = io::parse_config(base_doc());
  const auto rep = kernel::solve_infinite(validate(cfg.market, cfg.ambiguity, cfg.prefs));
  const json j = io::report_to_json(rep, 1.0);
  const auto back = io::infinite_report_from_json(j);
  CHECK(back.well_posed == rep.well_posed);
  CHECK(back.gamma_eps == rep.gamma_eps);
  CHECK(back.H == rep.H);
  CHECK(back.H_eps_plus == rep.H_eps_plus);
  CHECK(back.shrink == rep.shrink);
  CHECK((back.pi_eps - rep.pi_eps).norm() == 0.0);
  CHECK((back.merton_pi - rep.merton_pi).norm() == 0.0);
  CHECK((back.worst_mu - rep.worst_mu).norm() == 0.0);
  CHECK((back.worst_cov - rep.worst_cov).norm() == 0.0);
  CHECK(back.value_at(1.0) == rep.value_at(1.0));

  // Serialization text survives a parse round trip as well.
  const json reparsed = json::parse(j.dump(2));
  CHECK(io::infinite_report_from_json(reparsed).gamma_eps == rep.gamma_eps);

  json fin = base_doc();
  fin["preferences"]["horizon"] = {{"T", 1.0}, {"A", 1.0}};
  const io::ProblemConfig fcfg = io::parse_config(fin);
  const auto frep = kernel::solve_finite(validate(fcfg.market, fcfg.ambiguity, fcfg.prefs));
  const auto fback = io::finite_report_from_json(io::report_to_json(frep, 1.0));
  CHECK(fback.k_eps == frep.k_eps);
  CHECK(fback.T == frep.T);
  CHECK(fback.A == frep.A);
  CHECK((fback.pi_eps - frep.pi_eps).norm() == 0.0);
  CHECK(fback.g(0.3) == doctest::Approx(frep.g(0.3)).epsilon(1e-14));
  CHECK(fback.value_at(1.0) == doctest::Approx(frep.value_at(1.0)).epsilon(1e-14));
}

TEST_CASE("solve text output: golden lines for the base and cutoff cases") {
  std::ostringstream out;
  CHECK(io::cmd_solve(io::parse_config(base_doc()), "text", out) == 0);
  const std::string text = out.str();
  CHECK(text.find("pi = 0.5000\n") != std::string::npos);
  CHECK(text.find("gamma_eps = 0.0400\n") != std::string::npos);
  CHECK(text.find("value = -625.0000\n") != std::string::npos);

  std::ostringstream cut;
  CHECK(io::cmd_solve(io::parse_config(base_doc(0.3)), "text", cut) == 0);
  CHECK(cut.str().find("pi = 0.0000\n") != std::string::npos);

  std::ostringstream ill;
  json bad = base_doc(0.0);
  bad["market"] = {{"r", 0.1}, {"mu_hat", {0.2}}, {"cov", {{0.04}}}};
  bad["preferences"] = {{"rho", 0.001}, {"R", 0.5}, {"horizon", "infinite"}};
  CHECK(io::cmd_solve(io::parse_config(bad), "text", ill) == 2);
  CHECK(ill.str().find("well_posed = false") != std::string::npos);
  CHECK(ill.str().find("witness_lambda") != std::string::npos);
}

TEST_CASE("epsilon sweep writes the documented grid") {
  const auto out_path = (scratch_dir() / "sweep.csv").string();
  std::ostringstream log;
  CHECK(io::cmd_sweep(io::parse_config(base_doc()), "epsilon", 0.0, 0.4, 41, out_path, log) == 0);
  CHECK(log.str().find(out_path) != std::string::npos);

  std::ifstream f(out_path);
  std::stringstream buf;
  buf << f.rdbuf();
  const auto lines = split_lines(buf.str());
  REQUIRE(lines.size() == 42);
  CHECK(lines[0] == "epsilon,pi_norm,shrink,gamma_eps,value,well_posed");

  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    REQUIRE(cells.size() == 6);
    const double eps = std::strtod(cells[0].c_str(), nullptr);
    const double pi_norm = std::strtod(cells[1].c_str(), nullptr);
    CHECK(pi_norm <= prev + 1e-15);  // monotone shrinkage
    prev = pi_norm;
    if (eps >= 0.3 - 1e-12) CHECK(cells[1] == "0");  // cutoff rows exactly zero
    if (std::abs(eps - 0.1) < 1e-12)
      CHECK(pi_norm == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cells[5] == "true");
  }

  // Degenerate two-point grid from = to is allowed: two identical rows.
  std::ostringstream log2;
  const auto flat_path = (scratch_dir() / "flat.csv").string();
  CHECK(io::cmd_sweep(io::parse_config(base_doc()), "epsilon", 0.0, 0.0, 2, flat_path, log2) == 0);
  std::ifstream f2(flat_path);
  std::stringstream b2;
  b2 << f2.rdbuf();
  const auto flat = split_lines(b2.str());
  REQUIRE(flat.size() == 3);
  CHECK(flat[1] == flat[2]);
  const auto cells = split_csv(flat[1]);
  CHECK(std::strtod(cells[1].c_str(), nullptr) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("delta sweep needs the frobenius variant and degrades the value") {
  json doc = base_doc();
  CHECK_THROWS_AS(io::cmd_sweep(io::parse_config(doc), "delta", 0.0, 0.01, 3,
                                (scratch_dir() / "x.csv").string(), std::cout),
                  InputError);

  doc["ambiguity"]["vol"] = {{"frobenius", {{"delta", 0.005}}}};
  const auto path = (scratch_dir() / "delta.csv").string();
  std::ostringstream log;
  CHECK(io::cmd_sweep(io::parse_config(doc), "delta", 0.0, 0.03, 7, path, log) == 0);
  std::ifstream f(path);
  std::stringstream buf;
  buf << f.rdbuf();
  const auto lines = split_lines(buf.str());
  REQUIRE(lines.size() == 8);
  CHECK(lines[0].rfind("delta,", 0) == 0);
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    // A larger ball can only hurt an R > 1 investor: value is nonincreasing,
    // i.e. |value| grows along the grid.
    const double value = std::strtod(split_csv(lines[i])[4].c_str(), nullptr);
    CHECK(-value >= prev - 1e-9);
    prev = -value;
  }

  CHECK_THROWS_AS(io::cmd_sweep(io::parse_config(doc), "delta", 0.02, 0.01, 3,
                                (scratch_dir() / "y.csv").string(), std::cout),
                  InputError);
  CHECK_THROWS_AS(io::cmd_sweep(io::parse_config(doc), "delta", 0.0, 0.01, 1,
                                (scratch_dir() / "z.csv").string(), std::cout),
                  InputError);
}

TEST_CASE("verify passes the base case and flags an overridden holding") {
  json doc = base_doc();
  doc["oracle"] = {{"n_samples", 5000}};
  std::ostringstream out;
  CHECK(io::cmd_verify(io::parse_config(doc), std::nullopt, out) == 0);
  const std::string text = out.str();
  CHECK(text.find("PASS ellipsoid-min") != std::string::npos);
  CHECK(text.find("PASS hjb-zero") != std::string::npos);
  CHECK(text.find("PASS minimax-gap") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);

  std::ostringstream out2;
  CHECK(io::cmd_verify(io::parse_config(doc), VectorXd::Constant(1, 0.55), out2) == 2);
  CHECK(out2.str().find("FAIL hjb-zero") != std::string::npos);
  CHECK(out2.str().find("PASS hjb-max") != std::string::npos);
}

TEST_CASE("verify reports the divergence witness on ill-posed problems") {
  json bad = base_doc(0.0);
  bad["market"] = {{"r", 0.1}, {"mu_hat", {0.2}}, {"cov", {{0.04}}}};
  bad["preferences"] = {{"rho", 0.001}, {"R", 0.5}, {"horizon", "infinite"}};
  std::ostringstream out;
  CHECK(io::cmd_verify(io::parse_config(bad), std::nullopt, out) == 2);
  CHECK(out.str().find("witness_lambda") != std::string::npos);
  CHECK(out.str().find("divergence_exponent") != std::string::npos);
}

TEST_CASE("verify covers the finite horizon scaling checks") {
  json fin = base_doc();
  fin["preferences"]["horizon"] = {{"T", 1.0}, {"A", 1.0}};
  fin["oracle"] = {{"n_samples", 5000}};
  std::ostringstream out;
  CHECK(io::cmd_verify(io::parse_config(fin), std::nullopt, out) == 0);
  CHECK(out.str().find("PASS ode-residual") != std::string::npos);
  CHECK(out.str().find("PASS g-boundary") != std::string::npos);
}

TEST_CASE("simulate writes the summary, honors measures and round-trips paths") {
  json doc = base_doc();
  doc["sim"] = {{"n_paths", 400}, {"dt", 0.02}, {"t_max", 20.0}, {"seed", 5}};
  const io::ProblemConfig cfg = io::parse_config(doc);

  std::ostringstream worst_log;
  CHECK(io::cmd_simulate(cfg, "worst", "", "", worst_log) == 0);
  const auto worst_lines = split_lines(worst_log.str());
  REQUIRE(worst_lines.size() >= 3);
  CHECK(worst_lines[0].rfind("# measure=worst", 0) == 0);
  CHECK(worst_lines[1] == "time,q05,q25,q50,q75,q95,mean");

  std::ostringstream nominal_log;
  CHECK(io::cmd_simulate(cfg, "nominal", "", "", nominal_log) == 0);
  const double u_worst = comment_value(worst_lines[0], "estimate");
  const double u_nominal = comment_value(split_lines(nominal_log.str())[0], "estimate");
  CHECK(u_nominal > u_worst);  // the adversary's drift really hurts

  // Quantile columns are ordered within each row.
  const auto row = split_csv(worst_lines[2]);
  REQUIRE(row.size() == 7);
  for (int c = 1; c + 1 < 6; ++c)
    CHECK(std::strtod(row[c].c_str(), nullptr) <= std::strtod(row[c + 1].c_str(), nullptr));

  // Binary path export round-trips bit for bit.
  const auto bin = (scratch_dir() / "paths.rmpe").string();
  const auto csv = (scratch_dir() / "summary.csv").string();
  std::ostringstream log;
  CHECK(io::cmd_simulate(cfg, "worst", csv, bin, log) == 0);
  const io::PathsFile pf = io::read_paths_binary(bin);
  CHECK(pf.n_paths == 400);
  CHECK(pf.seed == 5);
  const auto rep = kernel::solve_infinite(validate(cfg.market, cfg.ambiguity, cfg.prefs));
  const auto ens = sim::simulate(cfg.market, sim::controls_of(rep),
                                 {rep.worst_mu, rep.worst_cov, "worst"}, cfg.prefs,
                                 *cfg.sim, cfg.w0);
  CHECK((pf.times - ens.times).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pf.wealth - ens.wealth).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pf.consumption - ens.consumption).cwiseAbs().maxCoeff() == 0.0);

  // Truncated or mislabeled files are refused.
  std::ifstream in(bin, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto cut = write_file("cut.rmpe", data.substr(0, data.size() - 9));
  CHECK_THROWS_AS(io::read_paths_binary(cut), IoFailure);
  data[0] = 'X';
  CHECK_THROWS_AS(io::read_paths_binary(write_file("xmagic.rmpe", data)), IoFailure);
}

TEST_CASE("simulate accepts a measure file and rejects unknown keys in it") {
  json doc = base_doc();
  doc["sim"] = {{"n_paths", 200}, {"dt", 0.05}, {"t_max", 5.0}, {"seed", 1}};
  const io::ProblemConfig cfg = io::parse_config(doc);
  const auto mfile = write_file("measure.json", R"({"mu": [0.07], "cov": [[0.05]]})");
  std::ostringstream log;
  CHECK(io::cmd_simulate(cfg, mfile, "", "", log) == 0);
  CHECK(log.str().find("measure.json") != std::string::npos);

  const auto badm = write_file("bad_measure.json", R"({"mu": [0.07], "vol": 0.2})");
  CHECK_THROWS_AS(io::cmd_simulate(cfg, badm, "", "", log), InputError);
}

TEST_CASE("simulate requires a sim block and reports ill-posed configs") {
  CHECK_THROWS_WITH_AS(io::cmd_simulate(io::parse_config(base_doc()), "worst", "", "", std::cout),
                       doctest::Contains("sim config required"), InputError);

  json bad = base_doc(0.0);
  bad["market"] = {{"r", 0.1}, {"mu_hat", {0.2}}, {"cov", {{0.04}}}};
  bad["preferences"] = {{"rho", 0.001}, {"R", 0.5}, {"horizon", "infinite"}};
  bad["sim"] = {{"n_paths", 100}, {"dt", 0.05}, {"t_max", 5.0}};
  std::ostringstream log;
  CHECK(io::cmd_simulate(io::parse_config(bad), "worst", "", "", log) == 2);
  CHECK(log.str().find("ill-posed") != std::string::npos);
}

}  // TEST_SUITE
