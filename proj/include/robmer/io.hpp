#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "robmer/oracle.hpp"
#include "robmer/sim.hpp"

// Config parsing, market estimation from returns, and the CLI command
// implementations. Commands return the process exit code: 0 success, 1 input
// error (also used for exceptions mapped by the CLI main), 2 mathematically
// meaningful non-success (ill-posed problem, failed verification).

namespace robmer::io {

using nlohmann::json;

struct ProblemConfig {
  MarketModel market;
  AmbiguityModel ambiguity;
  Preferences prefs;
  std::optional<sim::SimConfig> sim;
  std::optional<oracle::OracleConfig> oracle;
  double w0 = 1.0;
  std::vector<std::string> asset_names;  // from CSV header when estimated
};

/// Parses the JSON config document. The market block gives either the model
/// inline ({r, mu_hat, cov}) or a returns file to estimate from
/// ({r, returns_csv, periods_per_year}); relative CSV paths resolve against
/// `base_dir`. Unknown keys are rejected so typos cannot silently change a
/// run. Throws InputError subclasses with the offending key in the message.
ProblemConfig parse_config(const json& doc, const std::string& base_dir = ".");

/// Loads and parses a config file.
ProblemConfig load_config(const std::string& path);

struct EstimatedMarket {
  VectorXd mu_hat;       // per-period sample mean * periods_per_year
  MatrixXd sigma_cov;    // unbiased per-period sample covariance * periods_per_year
  std::vector<std::string> asset_names;
  std::int64_t n_rows = 0;
};

/// Estimates drift and covariance from a CSV of simple per-period arithmetic
/// returns (header row of asset names, one row per period). Requires at least
/// n + 2 rows; throws MalformedCsv (with the line number) or DegenerateSample.
EstimatedMarket estimate_market(const std::string& csv_path, double periods_per_year);

/// Formats a double with 17 significant digits (round-trip exact).
std::string fmt17(double x);

// --- commands -------------------------------------------------------------

/// Solve and print the rule. format: "text", "json" or "csv".
int cmd_solve(const ProblemConfig& cfg, const std::string& format, std::ostream& out);

/// Sweep epsilon or delta over a uniform grid and write one CSV row per
/// point: <param>,pi_norm,shrink,gamma_eps,value,well_posed.
int cmd_sweep(const ProblemConfig& cfg, const std::string& param, double from, double to,
              int points, const std::string& out_path, std::ostream& log);

/// Run every applicable oracle against the solved rule, one PASS/FAIL line
/// each. override_pi substitutes the candidate portfolio (the oracles then
/// judge the substitute). Ill-posed problems report the divergence witness.
int cmd_verify(const ProblemConfig& cfg, const std::optional<VectorXd>& override_pi,
               std::ostream& out);

/// Simulate under "nominal" (mu_hat, sigma_cov), "worst" (the solved
/// worst-case measure) or a JSON file {mu, cov}; writes a summary CSV
/// (per-time wealth quantiles, then realized utility) and optionally the full
/// recorded paths in the RMPE binary layout.
int cmd_simulate(const ProblemConfig& cfg, const std::string& measure_spec,
                 const std::string& out_csv, const std::string& paths_out,
                 std::ostream& log);

// --- serialization --------------------------------------------------------

json report_to_json(const kernel::InfiniteHorizonReport& r, double w0);
json report_to_json(const kernel::FiniteHorizonReport& r, double w0);

/// Inverse of report_to_json: reconstructs the report fields from a solve
/// document (derived quantities like value_at are recomputed, not parsed).
kernel::InfiniteHorizonReport infinite_report_from_json(const json& j);
kernel::FiniteHorizonReport finite_report_from_json(const json& j);

/// Writes the recorded ensemble grid in the RMPE v1 binary layout:
/// magic "RMPE", u32 version = 1, u64 n_paths, u64 n_times, u64 seed, then
/// times, wealth (row-major, path by path) and consumption as little-endian
/// IEEE doubles.
void write_paths_binary(const std::string& path, const sim::PathEnsemble& e);

struct PathsFile {
  std::uint64_t n_paths = 0;
  std::uint64_t n_times = 0;
  std::uint64_t seed = 0;
  VectorXd times;
  MatrixXd wealth;
  MatrixXd consumption;
};

PathsFile read_paths_binary(const std::string& path);

}  // namespace robmer::io
