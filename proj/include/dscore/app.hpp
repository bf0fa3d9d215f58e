#pragma once

// Runs a resolved RunConfig: builds the configured nest, dispatches on the
// mode, prints a table to `out`, and writes the JSON/CSV artifacts.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dscore/config.hpp"
#include "dscore/scores.hpp"
#include "dscore/selection.hpp"
#include "dscore/simulation.hpp"

namespace dscore::app {

using nlohmann::json;

enum ExitCode { kOk = 0, kConfigError = 2, kNumericalError = 3, kDegenerateData = 4 };

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Config:
      return kConfigError;
    case ErrorCode::DegenerateSample:
      return kDegenerateData;
    default:
      return kNumericalError;
  }
}

inline json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& s = c.simulation;
  return {
      {"mode", c.mode},
      {"model",
       {{"signal", m.signal}, {"base", m.base}, {"base_mean", m.base_mean}, {"base_sd", m.base_sd},
        {"base_lo", m.base_lo}, {"base_hi", m.base_hi}, {"d", m.d}, {"basis", m.basis},
        {"noise", m.noise}, {"noise_sd", m.noise_sd}, {"noise_lo", m.noise_lo},
        {"noise_hi", m.noise_hi}, {"eta_null", m.eta_null}, {"theta0", m.theta0}}},
      {"test", {{"penalty", c.test.penalty}, {"alpha", c.test.alpha}, {"df_at_S", c.test.df_at_S}}},
      {"simulation",
       {{"n", s.n}, {"replications", s.replications}, {"seed", s.seed}, {"n_grid", s.n_grid},
        {"signal_truth", s.signal_truth}, {"noise_truth", s.noise_truth}, {"workers", s.workers},
        {"scan_mode", s.scan_mode}, {"scan_tolerance", s.scan_tolerance},
        {"scan_samples", s.scan_samples}}},
      {"quadrature",
       {{"rel_tol", c.quadrature.rel_tol}, {"abs_tol", c.quadrature.abs_tol},
        {"max_subdivisions", c.quadrature.max_subdivisions},
        {"truncation_mass", c.quadrature.truncation_mass}}},
      {"io", {{"input", c.io.input}, {"output", c.io.output}, {"format", c.io.format}}},
  };
}

/// The configured model, its null parameter and the matching null truths.
struct Setup {
  std::shared_ptr<const ConvolvedModel> model;
  Vector theta0;
  bool composite = false;
  bool example2 = false;  // N(theta,1) signal with the N(0, eta^2) family
  Distribution null_signal;
  Distribution null_noise;
  BaseDensity base;
};

inline Setup build_setup(const RunConfig& c) {
  const ModelConfig& m = c.model;
  Setup s;
  SignalFamily signal;
  if (m.signal == "cosine") {
    s.base = m.base == "normal" ? normal_base(m.base_mean, m.base_sd) : uniform_base(m.base_lo, m.base_hi);
    signal = make_nested_cosine_family(s.base, m.d, c.quadrature).level(m.d);
    s.theta0 = Vector::Zero(m.d);
    s.null_signal = m.base == "normal" ? normal_distribution(m.base_mean, m.base_sd)
                                       : uniform_distribution(m.base_lo, m.base_hi);
  } else {
    signal = gaussian_location_family(m.theta0);
    s.theta0 = Vector::Constant(1, m.theta0);
    s.null_signal = normal_distribution(m.theta0, 1.0);
  }
  NoiseModel noise;
  if (m.noise == "normal") {
    noise = normal_noise(m.noise_sd);
    s.null_noise = normal_distribution(0.0, m.noise_sd);
  } else if (m.noise == "uniform") {
    noise = uniform_noise(m.noise_lo, m.noise_hi);
    s.null_noise = uniform_distribution(m.noise_lo, m.noise_hi);
  } else {
    noise = gaussian_noise_family(m.eta_null);
    s.null_noise = normal_distribution(0.0, m.eta_null);
    s.composite = true;
  }
  s.example2 = s.composite && m.signal == "gaussian-location";
  s.model = std::make_shared<const ConvolvedModel>(std::move(signal), std::move(noise), c.quadrature);
  return s;
}

namespace detail {

inline std::vector<double> parse_args(const std::string& where, const std::string& s, std::size_t count) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(dscore::detail::parse_double(where, dscore::detail::trim(item)));
  if (out.size() != count) {
    throw Error(ErrorCode::Config, where + ": expected " + std::to_string(count) + " comma-separated values");
  }
  return out;
}

inline Distribution shifted(Distribution d, double delta) {
  Distribution o = d;
  o.name = d.name + " shifted by " + std::to_string(delta);
  o.sample = [s = d.sample, delta](std::mt19937_64& r) { return s(r) + delta; };
  if (d.pdf) o.pdf = [p = d.pdf, delta](double x) { return p(x - delta); };
  if (d.support) {
    o.support = [sup = d.support, delta](double t) {
      const Interval w = sup(t);
      return Interval{w.lo + delta, w.hi + delta};
    };
  }
  o.mean = d.mean + delta;
  return o;
}

inline Distribution inflated(Distribution d, double f) {
  if (!(f > 0.0)) throw Error(ErrorCode::Config, "simulation: inflation factor must be > 0");
  Distribution o = d;
  const double mu = d.mean;
  o.name = d.name + " scaled by " + std::to_string(f);
  o.sample = [s = d.sample, mu, f](std::mt19937_64& r) { return mu + f * (s(r) - mu); };
  if (d.pdf) o.pdf = [p = d.pdf, mu, f](double x) { return p(mu + (x - mu) / f) / f; };
  if (d.support) {
    o.support = [sup = d.support, mu, f](double t) {
      const Interval w = sup(t);
      return Interval{mu + f * (w.lo - mu), mu + f * (w.hi - mu)};
    };
  }
  o.variance = d.variance * f * f;
  return o;
}

}  // namespace detail

/// null | normal:mu,sd | uniform:lo,hi | mixture:a,sd | shift:delta | inflate:factor | point:c
inline Distribution parse_truth(const std::string& where, const std::string& spec, const Distribution& null) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "null") return null;
  if (kind == "normal") {
    const auto a = detail::parse_args(where, args, 2);
    return normal_distribution(a[0], a[1]);
  }
  if (kind == "uniform") {
    const auto a = detail::parse_args(where, args, 2);
    return uniform_distribution(a[0], a[1]);
  }
  if (kind == "mixture") {
    const auto a = detail::parse_args(where, args, 2);
    return symmetric_mixture(null.mean, a[0], a[1]);
  }
  if (kind == "shift") return detail::shifted(null, detail::parse_args(where, args, 1)[0]);
  if (kind == "inflate") return detail::inflated(null, detail::parse_args(where, args, 1)[0]);
  if (kind == "point") return point_mass(detail::parse_args(where, args, 1)[0]);
  throw Error(ErrorCode::Config, where + ": unknown truth '" + spec +
                                     "' (null, normal:mu,sd, uniform:lo,hi, mixture:a,sd, shift:d, "
                                     "inflate:f, point:c)");
}

inline DataDrivenOptions test_options(const RunConfig& c) {
  DataDrivenOptions o;
  o.penalty = parse_penalty(c.test.penalty);
  o.alpha = c.test.alpha;
  return o;
}

inline Procedure build_procedure(const RunConfig& c, const Setup& s) {
  if (s.example2) return example2_procedure(s.theta0[0], c.test.alpha);
  if (s.composite) return composite_data_driven_procedure(s.model, s.theta0, test_options(c));
  auto sys = std::make_shared<const ScoreSystem>(build_simple_scores(*s.model, s.theta0));
  return simple_data_driven_procedure(sys, test_options(c));
}

inline TestReport run_test_on(const RunConfig& c, const Setup& s, std::span<const double> y) {
  DataDrivenOptions o = test_options(c);
  TestReport r;
  if (s.example2) {
    o.kind = StatKind::W;
    r = data_driven_test(plugin_scores_example2(y, s.theta0[0]), o);
  } else if (s.composite) {
    r = data_driven_test(*s.model, s.theta0, y, o);
  } else {
    r = data_driven_test(build_simple_scores(*s.model, s.theta0), y, o);
  }
  r.warnings = validate_penalty(o.penalty, static_cast<int>(r.statistics.size()));
  return r;
}

inline json report_json(const TestReport& r, bool df_at_S) {
  json j = {{"kind", to_string(r.kind)},
            {"n", r.n},
            {"statistics", r.statistics},
            {"selected_S", r.selected_S},
            {"stat_at_S", r.stat_at_S},
            {"reference", "chi2_1"},
            {"p_value", r.p_value},
            {"alpha", r.alpha},
            {"reject", r.reject},
            {"penalty", r.penalty},
            {"scores", r.provenance},
            {"warnings", r.warnings}};
  if (df_at_S) j["p_value_df_at_S_heuristic"] = r.p_value_df_at_S;
  return j;
}

class Output {
 public:
  explicit Output(const RunConfig& c) : dir_(c.io.output), format_(c.io.format) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }

  void write_report(const json& report, const std::vector<std::pair<std::string, std::string>>& flat) const {
    if (!enabled()) return;
    if (format_ == "json") {
      std::ofstream f(std::filesystem::path(dir_) / "report.json");
      f << std::setw(2) << report << "\n";
    } else {
      std::ofstream f(std::filesystem::path(dir_) / "report.csv");
      f << "field,value\n";
      for (const auto& [k, v] : flat) f << k << "," << v << "\n";
    }
  }

  void write_table(const std::string& name, const std::string& text) const {
    if (!enabled()) return;
    std::ofstream f(std::filesystem::path(dir_) / name);
    f << text;
  }

 private:
  std::string dir_;
  std::string format_;
};

inline std::vector<std::pair<std::string, std::string>> flatten(const json& j, const std::string& prefix = "") {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      auto sub = flatten(*it, key);
      out.insert(out.end(), sub.begin(), sub.end());
    } else if (it->is_string()) {
      out.emplace_back(key, it->get<std::string>());
    } else if (it->is_array()) {
      std::string joined;
      for (const auto& v : *it) joined += (joined.empty() ? "" : ";") + (v.is_string() ? v.get<std::string>() : v.dump());
      out.emplace_back(key, joined);
    } else {
      out.emplace_back(key, it->dump());
    }
  }
  return out;
}

inline void emit(const Output& o, const json& report) { o.write_report(report, flatten(report)); }

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Modes

inline int run_test_mode(const RunConfig& c, std::ostream& out) {
  if (c.io.input.empty()) throw Error(ErrorCode::Config, "io: test mode needs an input file (--data)");
  const Setup s = build_setup(c);
  const std::vector<double> y = load_observations(c.io.input);
  if (s.composite && y.size() < 2) throw Error(ErrorCode::DegenerateSample, "composite test needs n >= 2");
  const TestReport r = run_test_on(c, s, y);

  const char* K = to_string(r.kind);
  out << "data-driven " << K << "_S test, n = " << r.n << ", penalty " << r.penalty << "\n";
  out << "  k    " << K << "_k          penalized\n";
  std::ostringstream csv;
  csv << "k,statistic,penalized\n";
  const Penalty pen = parse_penalty(c.test.penalty);
  for (std::size_t k = 0; k < r.statistics.size(); ++k) {
    const double pv = r.statistics[k] - pen(static_cast<int>(k + 1), static_cast<double>(r.n));
    out << "  " << std::setw(2) << k + 1 << "  " << std::setw(12) << fmt(r.statistics[k]) << "  "
        << std::setw(12) << fmt(pv) << (static_cast<int>(k + 1) == r.selected_S ? "  <- S" : "") << "\n";
    csv << k + 1 << "," << fmt(r.statistics[k], 17) << "," << fmt(pv, 17) << "\n";
  }
  out << "S = " << r.selected_S << ", " << K << "_S = " << fmt(r.stat_at_S) << ", p (chi2_1) = "
      << fmt(r.p_value) << ", alpha = " << r.alpha << " -> " << (r.reject ? "reject" : "retain") << "\n";
  if (c.test.df_at_S) {
    out << "heuristic p against chi2_S (not asymptotically justified): " << fmt(r.p_value_df_at_S) << "\n";
  }
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";

  const Output o(c);
  emit(o, {{"config", to_json(c)}, {"result", report_json(r, c.test.df_at_S)}});
  o.write_table("statistics.csv", csv.str());
  return kOk;
}

inline ScenarioSpec scenario(const RunConfig& c, const Setup& s, bool null_truth) {
  ScenarioSpec sc;
  sc.signal_truth = null_truth ? s.null_signal
                               : parse_truth("simulation.signal_truth", c.simulation.signal_truth, s.null_signal);
  sc.noise_truth = null_truth ? s.null_noise
                              : parse_truth("simulation.noise_truth", c.simulation.noise_truth, s.null_noise);
  sc.procedure = build_procedure(c, s);
  sc.n = c.simulation.n;
  sc.replications = c.simulation.replications;
  sc.seed = c.simulation.seed;
  sc.workers = c.simulation.workers;
  return sc;
}

inline int run_simulate_null(const RunConfig& c, std::ostream& out) {
  const Setup s = build_setup(c);
  const ScenarioSpec sc = scenario(c, s, true);
  const CalibrationResult r = calibrate_null(sc);
  out << "null calibration: " << sc.procedure.name << ", n = " << sc.n << ", " << sc.replications
      << " replications, seed " << sc.seed << "\n";
  out << "  KS distance to chi2_1      " << fmt(r.ks_distance) << "\n";
  out << "  level at alpha = " << c.test.alpha << "       " << fmt(r.level.value) << " (se " << fmt(r.level.se) << ")\n";
  out << "  fraction S = 1             " << fmt(r.fraction_S1.value) << " (se " << fmt(r.fraction_S1.se) << ")\n";
  out << "  mean statistic             " << fmt(r.mean_statistic) << " (se " << fmt(r.mean_statistic_se) << ")\n";

  std::ostringstream reps, ecdf;
  reps << "replication,statistic,p_value,selected_S,reject\n";
  for (std::size_t i = 0; i < r.replications.size(); ++i) {
    const auto& x = r.replications[i];
    reps << i << "," << fmt(x.statistic, 17) << "," << fmt(x.p_value, 17) << "," << x.selected_S << ","
         << (x.reject ? 1 : 0) << "\n";
  }
  ecdf << "statistic,empirical_cdf,chi2_cdf\n";
  for (const auto& [x, f] : r.empirical_cdf()) ecdf << fmt(x, 17) << "," << fmt(f, 17) << "," << fmt(chi2_cdf(1, x), 17) << "\n";

  const Output o(c);
  emit(o, {{"config", to_json(c)},
           {"result",
            {{"procedure", sc.procedure.name},
             {"ks_distance", r.ks_distance},
             {"level", r.level.value},
             {"level_se", r.level.se},
             {"fraction_S1", r.fraction_S1.value},
             {"fraction_S1_se", r.fraction_S1.se},
             {"mean_statistic", r.mean_statistic},
             {"mean_statistic_se", r.mean_statistic_se}}}});
  o.write_table("replications.csv", reps.str());
  o.write_table("ecdf.csv", ecdf.str());
  return kOk;
}

inline int run_simulate_power(const RunConfig& c, std::ostream& out) {
  const Setup s = build_setup(c);
  const ScenarioSpec sc = scenario(c, s, false);
  const auto curve = power_curve(sc, c.simulation.n_grid);
  out << "power: " << sc.procedure.name << ", truth X ~ " << sc.signal_truth.name << ", e ~ "
      << sc.noise_truth.name << ", " << sc.replications << " replications per n\n";
  out << "       n      rate        se    mean S\n";
  std::ostringstream csv;
  csv << "n,rate,se,mean_S\n";
  json rows = json::array();
  for (const auto& p : curve) {
    out << "  " << std::setw(6) << p.n << "  " << std::setw(8) << fmt(p.rate.value, 4) << "  " << std::setw(8)
        << fmt(p.rate.se, 3) << "  " << std::setw(8) << fmt(p.mean_S, 4) << "\n";
    csv << p.n << "," << fmt(p.rate.value, 17) << "," << fmt(p.rate.se, 17) << "," << fmt(p.mean_S, 17) << "\n";
    rows.push_back({{"n", p.n}, {"rate", p.rate.value}, {"se", p.rate.se}, {"mean_S", p.mean_S}});
  }
  const Output o(c);
  emit(o, {{"config", to_json(c)}, {"result", {{"procedure", sc.procedure.name}, {"power", rows}}}});
  o.write_table("power.csv", csv.str());
  return kOk;
}

/// The score system used by scores-dump and d1-scan. Composite models are
/// evaluated at eta_null for the dump and at the plug-in limit for the scan.
inline ScoreSystem score_system(const Setup& s, const Vector& eta) {
  if (!s.composite) return build_simple_scores(*s.model, s.theta0);
  return build_efficient_scores(*s.model, s.theta0, eta);
}

struct Grid {
  double lo, hi, step;
};

inline Grid parse_grid(const std::string& spec) {
  const auto a = spec.find(':');
  const auto b = spec.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) {
    throw Error(ErrorCode::Config, "grid: expected lo:hi:step, got '" + spec + "'");
  }
  Grid g{dscore::detail::parse_double("grid", spec.substr(0, a)),
         dscore::detail::parse_double("grid", spec.substr(a + 1, b - a - 1)),
         dscore::detail::parse_double("grid", spec.substr(b + 1))};
  if (!(g.hi >= g.lo) || !(g.step > 0.0) || (g.hi - g.lo) / g.step > 1e6) {
    throw Error(ErrorCode::Config, "grid: need lo <= hi, step > 0 and at most 1e6 points");
  }
  return g;
}

inline int run_scores_dump(const RunConfig& c, const std::string& grid, std::ostream& out) {
  const Setup s = build_setup(c);
  const Grid g = parse_grid(grid);
  const ScoreSystem sys = score_system(s, s.model->noise().eta_null);
  std::ostringstream csv;
  csv << "y";
  for (int j = 1; j <= sys.k(); ++j) csv << ",l" << j;
  csv << ",density\n";
  const auto count = static_cast<long long>(std::floor((g.hi - g.lo) / g.step + 1e-9)) + 1;
  for (long long i = 0; i < count; ++i) {
    const double y = g.lo + static_cast<double>(i) * g.step;
    const Vector l = sys.score(y);
    csv << fmt(y, 17);
    for (int j = 0; j < sys.k(); ++j) csv << "," << fmt(l[j], 17);
    csv << "," << fmt(sys.density(y), 17) << "\n";
  }
  const Output o(c);
  if (o.enabled()) {
    o.write_table("scores.csv", csv.str());
    json L = json::array();
    for (int i = 0; i < sys.k(); ++i) {
      json row = json::array();
      for (int j = 0; j < sys.k(); ++j) row.push_back(sys.L()(i, j));
      L.push_back(row);
    }
    emit(o, {{"config", to_json(c)}, {"result", {{"scores", sys.description()}, {"L", L}, {"points", count}}}});
  } else {
    out << csv.str();
  }
  return kOk;
}

inline int run_d1_scan(const RunConfig& c, std::ostream& out) {
  const Setup s = build_setup(c);
  const Distribution fx = parse_truth("simulation.signal_truth", c.simulation.signal_truth, s.null_signal);
  const Distribution fe = parse_truth("simulation.noise_truth", c.simulation.noise_truth, s.null_noise);
  Vector eta = s.model->noise().eta_null;
  if (s.composite) {
    const double fvar = signal_moments(s.model->signal(), s.theta0, s.model->spec()).second;
    eta = s.model->noise().eta_from_variance(std::max(fx.variance + fe.variance - fvar, 1e-4));
  }
  const ScoreSystem sys = score_system(s, eta);
  D1ScanOptions opt;
  opt.mode = c.simulation.scan_mode == "quadrature"   ? ScanMode::quadrature
             : c.simulation.scan_mode == "monte-carlo" ? ScanMode::monte_carlo
                                                       : ScanMode::automatic;
  opt.tolerance = c.simulation.scan_tolerance;
  opt.mc_samples = c.simulation.scan_samples;
  opt.seed = c.simulation.seed;
  opt.spec = c.quadrature;
  const D1ScanResult r = d1_scan(fx, fe, sys, opt);

  out << "d1 scan: X ~ " << fx.name << ", e ~ " << fe.name << " ("
      << (r.mode == ScanMode::quadrature ? "quadrature" : "monte carlo") << ")\n";
  std::ostringstream csv;
  csv << "i,expectation,threshold\n";
  for (int i = 0; i < sys.k(); ++i) {
    out << "  E l*_" << i + 1 << " = " << std::setw(14) << fmt(r.expectations[i]) << "   threshold "
        << fmt(r.thresholds[static_cast<std::size_t>(i)], 3) << "\n";
    csv << i + 1 << "," << fmt(r.expectations[i], 17) << "," << fmt(r.thresholds[static_cast<std::size_t>(i)], 17) << "\n";
  }
  if (r.K) {
    out << "K = " << *r.K << ", C_K = " << fmt(r.C_K) << "\n";
  } else {
    out << "K = none (no detectable direction up to d = " << sys.k() << ")\n";
  }
  std::vector<double> e(r.expectations.data(), r.expectations.data() + r.expectations.size());
  const Output o(c);
  emit(o, {{"config", to_json(c)},
           {"result",
            {{"expectations", e},
             {"thresholds", r.thresholds},
             {"mode", r.mode == ScanMode::quadrature ? "quadrature" : "monte-carlo"},
             {"K", r.K ? json(*r.K) : json(nullptr)},
             {"C_K", r.C_K}}}});
  o.write_table("d1.csv", csv.str());
  return kOk;
}

/// Dispatches on c.mode. Library errors propagate to the caller.
inline int run(const RunConfig& c, std::ostream& out, const std::string& grid = "") {
  validate_config(c);
  if (c.mode == "test") return run_test_mode(c, out);
  if (c.mode == "simulate-null") return run_simulate_null(c, out);
  if (c.mode == "simulate-power") return run_simulate_power(c, out);
  if (c.mode == "scores-dump") return run_scores_dump(c, grid, out);
  if (c.mode == "d1-scan") return run_d1_scan(c, out);
  throw Error(ErrorCode::Config, "mode: unknown mode '" + c.mode + "'");
}

}  // namespace dscore::app
