#pragma once

// Sectioned key = value run configuration.
//
//   [model]       signal, base, base_mean, base_sd, base_lo, base_hi, d, basis,
//                 noise, noise_sd, noise_lo, noise_hi, eta_null, theta0
//   [test]        penalty, alpha, df_at_S
//   [simulation]  n, replications, seed, n_grid, signal_truth, noise_truth,
//                 workers, scan_mode, scan_tolerance, scan_samples
//   [quadrature]  rel_tol, abs_tol, max_subdivisions, truncation_mass
//   [io]          input, output, format
//
// '#' and ';' start comments. Unknown sections and keys are errors.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dscore/error.hpp"
#include "dscore/quadrature.hpp"
#include "dscore/selection.hpp"

namespace dscore {

struct ModelConfig {
  std::string signal = "cosine";  // cosine | gaussian-location
  std::string base = "normal";    // normal | uniform (cosine signal)
  double base_mean = 0.0;
  double base_sd = 1.0;
  double base_lo = 0.0;
  double base_hi = 1.0;
  int d = 10;
  std::string basis = "cosine";
  std::string noise = "normal";  // normal | uniform | gaussian-family
  double noise_sd = 1.0;
  double noise_lo = -0.5;
  double noise_hi = 0.5;
  double eta_null = 1.0;
  double theta0 = 0.0;  // null location for gaussian-location
};

struct TestConfig {
  std::string penalty = "schwarz";
  double alpha = 0.05;
  bool df_at_S = false;
};

struct SimulationConfig {
  int n = 2000;
  int replications = 1000;
  std::uint64_t seed = 1;
  std::vector<int> n_grid{100, 400, 1600};
  std::string signal_truth = "null";
  std::string noise_truth = "null";
  unsigned workers = 1;
  std::string scan_mode = "automatic";  // automatic | quadrature | monte-carlo
  double scan_tolerance = 1e-6;
  int scan_samples = 200000;
};

struct IoConfig {
  std::string input;
  std::string output;
  std::string format = "json";  // json | csv
};

struct RunConfig {
  std::string mode = "test";  // test | simulate-null | simulate-power | scores-dump | d1-scan
  ModelConfig model;
  TestConfig test;
  SimulationConfig simulation;
  QuadratureSpec quadrature;
  IoConfig io;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void config_fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::Config, where + ": " + what);
}

inline double parse_double(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    config_fail(where, "expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    config_fail(where, "expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size() || v.starts_with("-")) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    config_fail(where, "expected an unsigned integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_fail(where, "expected true or false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& where, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(where, trim(item))));
  if (out.empty()) config_fail(where, "expected a comma-separated list");
  return out;
}

inline void check_choice(const std::string& where, const std::string& v,
                         std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (v == a) return;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  config_fail(where, "'" + v + "' is not one of " + list);
}

using Setter = std::function<void(RunConfig&, const std::string& where, const std::string& value)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> table = {
      {"model.signal", [](RunConfig& c, const std::string&, const std::string& v) { c.model.signal = v; }},
      {"model.base", [](RunConfig& c, const std::string&, const std::string& v) { c.model.base = v; }},
      {"model.base_mean", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.base_mean = parse_double(w, v); }},
      {"model.base_sd", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.base_sd = parse_double(w, v); }},
      {"model.base_lo", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.base_lo = parse_double(w, v); }},
      {"model.base_hi", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.base_hi = parse_double(w, v); }},
      {"model.d", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.d = static_cast<int>(parse_int(w, v)); }},
      {"model.basis", [](RunConfig& c, const std::string&, const std::string& v) { c.model.basis = v; }},
      {"model.noise", [](RunConfig& c, const std::string&, const std::string& v) { c.model.noise = v; }},
      {"model.noise_sd", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.noise_sd = parse_double(w, v); }},
      {"model.noise_lo", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.noise_lo = parse_double(w, v); }},
      {"model.noise_hi", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.noise_hi = parse_double(w, v); }},
      {"model.eta_null", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.eta_null = parse_double(w, v); }},
      {"model.theta0", [](RunConfig& c, const std::string& w, const std::string& v) { c.model.theta0 = parse_double(w, v); }},
      {"test.penalty", [](RunConfig& c, const std::string&, const std::string& v) { c.test.penalty = v; }},
      {"test.alpha", [](RunConfig& c, const std::string& w, const std::string& v) { c.test.alpha = parse_double(w, v); }},
      {"test.df_at_S", [](RunConfig& c, const std::string& w, const std::string& v) { c.test.df_at_S = parse_bool(w, v); }},
      {"simulation.n", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.n = static_cast<int>(parse_int(w, v)); }},
      {"simulation.replications", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.replications = static_cast<int>(parse_int(w, v)); }},
      {"simulation.seed", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.seed = parse_u64(w, v); }},
      {"simulation.n_grid", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.n_grid = parse_int_list(w, v); }},
      {"simulation.signal_truth", [](RunConfig& c, const std::string&, const std::string& v) { c.simulation.signal_truth = v; }},
      {"simulation.noise_truth", [](RunConfig& c, const std::string&, const std::string& v) { c.simulation.noise_truth = v; }},
      {"simulation.workers", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.workers = static_cast<unsigned>(parse_u64(w, v)); }},
      {"simulation.scan_mode", [](RunConfig& c, const std::string&, const std::string& v) { c.simulation.scan_mode = v; }},
      {"simulation.scan_tolerance", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.scan_tolerance = parse_double(w, v); }},
      {"simulation.scan_samples", [](RunConfig& c, const std::string& w, const std::string& v) { c.simulation.scan_samples = static_cast<int>(parse_int(w, v)); }},
      {"quadrature.rel_tol", [](RunConfig& c, const std::string& w, const std::string& v) { c.quadrature.rel_tol = parse_double(w, v); }},
      {"quadrature.abs_tol", [](RunConfig& c, const std::string& w, const std::string& v) { c.quadrature.abs_tol = parse_double(w, v); }},
      {"quadrature.max_subdivisions", [](RunConfig& c, const std::string& w, const std::string& v) { c.quadrature.max_subdivisions = static_cast<int>(parse_int(w, v)); }},
      {"quadrature.truncation_mass", [](RunConfig& c, const std::string& w, const std::string& v) { c.quadrature.truncation_mass = parse_double(w, v); }},
      {"io.input", [](RunConfig& c, const std::string&, const std::string& v) { c.io.input = v; }},
      {"io.output", [](RunConfig& c, const std::string&, const std::string& v) { c.io.output = v; }},
      {"io.format", [](RunConfig& c, const std::string&, const std::string& v) { c.io.format = v; }},
  };
  return table;
}

}  // namespace detail

/// Applies one "section.key" = value assignment.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& table = detail::config_setters();
  const auto it = table.find(key);
  if (it == table.end()) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? key : key.substr(0, dot);
    detail::config_fail(section, "unknown key '" + key + "'");
  }
  it->second(c, key, value);
}

/// Semantic validation; messages name the failing key.
inline void validate_config(const RunConfig& c) {
  using detail::check_choice;
  using detail::config_fail;
  check_choice("model.signal", c.model.signal, {"cosine", "gaussian-location"});
  check_choice("model.base", c.model.base, {"normal", "uniform"});
  check_choice("model.basis", c.model.basis, {"cosine"});
  check_choice("model.noise", c.model.noise, {"normal", "uniform", "gaussian-family"});
  if (c.model.d < 1 || c.model.d > 64) config_fail("model.d", "must lie in 1..64");
  if (!(c.model.base_sd > 0.0)) config_fail("model.base_sd", "must be > 0");
  if (!(c.model.base_hi > c.model.base_lo)) config_fail("model.base_hi", "must exceed base_lo");
  if (!(c.model.noise_sd > 0.0)) config_fail("model.noise_sd", "must be > 0");
  if (!(c.model.noise_hi > c.model.noise_lo)) config_fail("model.noise_hi", "must exceed noise_lo");
  if (!(c.model.eta_null > 0.0)) config_fail("model.eta_null", "must be > 0");
  try {
    validate_penalty(parse_penalty(c.test.penalty), c.model.signal == "cosine" ? c.model.d : 1);
  } catch (const Error& e) {
    config_fail("test.penalty", e.message());
  }
  if (!(c.test.alpha >= 0.0 && c.test.alpha <= 1.0)) config_fail("test.alpha", "must lie in [0, 1]");
  if (c.simulation.n < 2) config_fail("simulation.n", "must be >= 2");
  if (c.simulation.replications < 1) config_fail("simulation.replications", "must be >= 1");
  for (int n : c.simulation.n_grid) {
    if (n < 2) config_fail("simulation.n_grid", "entries must be >= 2");
  }
  check_choice("simulation.scan_mode", c.simulation.scan_mode, {"automatic", "quadrature", "monte-carlo"});
  if (!(c.simulation.scan_tolerance > 0.0)) config_fail("simulation.scan_tolerance", "must be > 0");
  if (c.simulation.scan_samples < 2) config_fail("simulation.scan_samples", "must be >= 2");
  try {
    c.quadrature.validate();
  } catch (const Error&) {
    config_fail("quadrature", "need rel_tol > 0, abs_tol >= 0, max_subdivisions >= 1, 0 < truncation_mass < 1e-6");
  }
  check_choice("io.format", c.io.format, {"json", "csv"});
}

inline RunConfig parse_config(std::istream& in, const std::string& origin = "config") {
  RunConfig c;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') detail::config_fail(where, "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "test" && section != "simulation" && section != "quadrature" &&
          section != "io") {
        detail::config_fail(section, "unknown section [" + section + "] at " + where);
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) detail::config_fail(where, "expected key = value");
    if (section.empty()) detail::config_fail(where, "key outside any section");
    set_config_value(c, section + "." + detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "io: cannot open config file '" + path + "'");
  return parse_config(in, path);
}

/// Reads one observation per line with an optional header "y". Blank lines are skipped.
inline std::vector<double> parse_observations(std::istream& in, const std::string& origin = "data") {
  std::vector<double> y;
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (first && (line == "y" || line == "\"y\"")) {
      first = false;
      continue;
    }
    first = false;
    std::size_t used = 0;
    double v = 0.0;
    bool ok = true;
    try {
      v = std::stod(line, &used);
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok || used != line.size()) {
      throw Error(ErrorCode::DegenerateSample,
                  origin + ": line " + std::to_string(lineno) + " is not a number: '" + line + "'");
    }
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::DegenerateSample, origin + ": line " + std::to_string(lineno) + " is not finite");
    }
    y.push_back(v);
  }
  if (y.empty()) throw Error(ErrorCode::DegenerateSample, origin + ": no observations");
  return y;
}

inline std::vector<double> load_observations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "io: cannot open data file '" + path + "'");
  return parse_observations(in, path);
}

}  // namespace dscore
