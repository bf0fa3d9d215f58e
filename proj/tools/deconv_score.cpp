#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dscore/app.hpp"

namespace {

std::string config_help() {
  const dscore::app::json defaults = dscore::app::to_json(dscore::RunConfig{});
  std::string text =
      "\nConfig file: sectioned 'key = value' lines, '#' comments. Keys and defaults:\n";
  for (const char* section : {"model", "test", "simulation", "quadrature", "io"}) {
    text += "  [" + std::string(section) + "]\n";
    for (const auto& [key, value] : defaults[section].items()) {
      text += "    " + key + " = " + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
    }
  }
  text +=
      "  model.signal: cosine | gaussian-location; model.noise: normal | uniform | gaussian-family\n"
      "  simulation truths: null | normal:mu,sd | uniform:lo,hi | mixture:a,sd | shift:d | inflate:f | point:c\n"
      "  test.penalty: schwarz | akaike | custom:<expr in j and n>\n"
      "Exit codes: 0 ok, 2 config error, 3 numerical error, 4 degenerate data.\n";
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven efficient score tests for deconvolution (Y = X + e)", "deconv-score"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(config_help());

  std::string config_path, data_path, grid, sim_kind, dump_kind;
  std::optional<std::string> penalty, out_dir, format;
  std::optional<double> alpha;
  std::optional<int> d, reps;
  std::optional<unsigned long long> seed;
  std::optional<unsigned> workers;
  bool df_at_S = false;

  app.add_option("--config", config_path, "Run configuration file")->required()->check(CLI::ExistingFile);
  app.add_option("--penalty", penalty, "schwarz | akaike | custom:<expr> (default schwarz)");
  app.add_option("--alpha", alpha, "Test level (default 0.05)");
  app.add_option("--d", d, "Maximum nest dimension (default 10)");
  app.add_option("--seed", seed, "Master seed for simulations (default 1)");
  app.add_option("--reps", reps, "Monte Carlo replications (default 1000)");
  app.add_option("--workers", workers, "Worker threads for simulations (default 1, 0 = all cores)");
  app.add_option("--out", out_dir, "Directory for report and CSV tables");
  app.add_option("--format", format, "Report format: csv | json (default json)");
  app.add_flag("--df-at-S", df_at_S, "Also report the heuristic p-value against chi2_S");

  auto* test = app.add_subcommand("test", "Run the data-driven test on observations");
  test->add_option("--data", data_path, "CSV with one observation per line, optional header y")->required();
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo null calibration or power curve");
  simulate->add_option("kind", sim_kind, "null | power")->required()->check(CLI::IsMember({"null", "power"}));
  auto* scores = app.add_subcommand("scores", "Inspect score functions");
  scores->add_option("action", dump_kind, "dump")->required()->check(CLI::IsMember({"dump"}));
  scores->add_option("--grid", grid, "y grid lo:hi:step")->required();
  auto* scan = app.add_subcommand("d1-scan", "Expected scores under the configured truth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dscore::app::kConfigError;
  }

  try {
    dscore::RunConfig c = dscore::load_config(config_path);
    if (test->parsed()) {
      c.mode = "test";
      c.io.input = data_path;
    } else if (simulate->parsed()) {
      c.mode = sim_kind == "null" ? "simulate-null" : "simulate-power";
    } else if (scores->parsed()) {
      c.mode = "scores-dump";
    } else if (scan->parsed()) {
      c.mode = "d1-scan";
    }
    if (penalty) c.test.penalty = *penalty;
    if (alpha) c.test.alpha = *alpha;
    if (d) c.model.d = *d;
    if (seed) c.simulation.seed = *seed;
    if (reps) c.simulation.replications = *reps;
    if (workers) c.simulation.workers = *workers;
    if (out_dir) c.io.output = *out_dir;
    if (format) c.io.format = *format;
    if (df_at_S) c.test.df_at_S = true;
    return dscore::app::run(c, std::cout, grid);
  } catch (const dscore::Error& e) {
    std::cerr << "error (" << dscore::to_string(e.code()) << "): " << e.message() << "\n";
    return dscore::app::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dscore::app::kNumericalError;
  }
}
