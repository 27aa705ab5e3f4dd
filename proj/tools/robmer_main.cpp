#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "robmer/errors.hpp"
#include "robmer/io.hpp"

namespace {

std::optional<robmer::VectorXd> parse_pi(const std::string& csv) {
  if (csv.empty()) return std::nullopt;
  std::vector<double> vals;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string cell =
        csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    char* end = nullptr;
    const double x = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size())
      throw robmer::InputError("--override-pi: bad number '" + cell + "'");
    vals.push_back(x);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  robmer::VectorXd v(static_cast<int>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<int>(i)) = vals[i];
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust consumption and investment rules under drift and volatility ambiguity"};
  app.require_subcommand(1);

  std::string config_path;
  std::string format = "text";
  auto* solve = app.add_subcommand("solve", "solve the robust rule and print it");
  solve->add_option("-c,--config", config_path, "problem config (JSON)")->required();
  solve->add_option("--format", format, "text, json or csv (default text)");

  std::string sweep_param = "epsilon";
  std::string sweep_out;
  double sweep_from = 0.0;
  double sweep_to = 0.0;
  int sweep_points = 2;
  auto* sweep = app.add_subcommand("sweep", "sweep epsilon or delta, write a CSV");
  sweep->add_option("-c,--config", config_path, "problem config (JSON)")->required();
  sweep->add_option("--param", sweep_param, "epsilon or delta (default epsilon)");
  sweep->add_option("--from", sweep_from, "first grid value")->required();
  sweep->add_option("--to", sweep_to, "last grid value")->required();
  sweep->add_option("--points", sweep_points, "grid size (>= 2)")->required();
  sweep->add_option("--out", sweep_out, "output CSV path")->required();

  std::string override_pi_csv;
  auto* verify = app.add_subcommand("verify", "cross-check the solved rule against oracles");
  verify->add_option("-c,--config", config_path, "problem config (JSON)")->required();
  verify->add_option("--override-pi", override_pi_csv,
                     "judge this portfolio instead (comma-separated)");

  std::string measure = "worst";
  std::string sim_out;
  std::string paths_out;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo under a chosen measure");
  simulate->add_option("-c,--config", config_path, "problem config (JSON)")->required();
  simulate->add_option("--measure", measure,
                       "nominal, worst, or a JSON file {mu, cov} (default worst)");
  simulate->add_option("--out", sim_out, "summary CSV path (default stdout)");
  simulate->add_option("--paths-out", paths_out, "binary path-ensemble output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const robmer::io::ProblemConfig cfg = robmer::io::load_config(config_path);
    if (solve->parsed()) return robmer::io::cmd_solve(cfg, format, std::cout);
    if (sweep->parsed())
      return robmer::io::cmd_sweep(cfg, sweep_param, sweep_from, sweep_to, sweep_points,
                                   sweep_out, std::cout);
    if (verify->parsed())
      return robmer::io::cmd_verify(cfg, parse_pi(override_pi_csv), std::cout);
    if (simulate->parsed())
      return robmer::io::cmd_simulate(cfg, measure, sim_out, paths_out, std::cout);
  } catch (const robmer::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
