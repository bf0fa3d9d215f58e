#pragma once

// Seeded Monte Carlo harness: samples Y = X + e from a chosen truth, applies a
// test procedure per replication, and aggregates calibration and power
// summaries. Each replication draws from its own stream derived from
// (seed, replication, role), so results do not depend on scheduling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dscore/families.hpp"
#include "dscore/parallel.hpp"
#include "dscore/quadrature.hpp"
#include "dscore/scores.hpp"
#include "dscore/selection.hpp"
#include "dscore/teststat.hpp"

namespace dscore {

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class StreamRole : std::uint64_t { signal = 1, noise = 2, auxiliary = 3 };

inline std::uint64_t derive_key(std::uint64_t seed, std::uint64_t index, std::uint64_t role) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s = a ^ (index * 0xd1b54a32d192ed03ULL);
  std::uint64_t b = splitmix64(s);
  s = b ^ (role * 0x8cb92ba72f3d8dd7ULL);
  return splitmix64(s);
}

inline std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t index, StreamRole role) {
  return std::mt19937_64(derive_key(seed, index, static_cast<std::uint64_t>(role)));
}

// ---------------------------------------------------------------------------
// Truth distributions

struct Distribution {
  std::string name;
  std::function<double(std::mt19937_64&)> sample;
  /// Density and support window (per-tail mass); empty for distributions
  /// without a density, which forces Monte Carlo mode in d1_scan.
  std::function<double(double)> pdf;
  std::function<Interval(double tail)> support;
  double mean = 0.0;
  double variance = 0.0;

  bool has_density() const noexcept { return static_cast<bool>(pdf); }
};

inline Distribution point_mass(double c) {
  return {"point(" + std::to_string(c) + ")", [c](std::mt19937_64&) { return c; }, {}, {}, c, 0.0};
}

inline Distribution normal_distribution(double mean, double sd) {
  if (!(sd > 0.0)) throw Error(ErrorCode::Config, "normal truth needs sd > 0");
  const BaseDensity b = normal_base(mean, sd);
  return {"normal(" + std::to_string(mean) + ", " + std::to_string(sd) + "^2)",
          [mean, sd](std::mt19937_64& r) { return mean + sd * std::normal_distribution<double>(0.0, 1.0)(r); },
          b.pdf, b.support, mean, sd * sd};
}

inline Distribution uniform_distribution(double lo, double hi) {
  if (!(hi > lo)) throw Error(ErrorCode::Config, "uniform truth needs lo < hi");
  const BaseDensity b = uniform_base(lo, hi);
  return {"uniform(" + std::to_string(lo) + ", " + std::to_string(hi) + ")",
          [lo, hi](std::mt19937_64& r) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(r); },
          b.pdf, b.support, 0.5 * (lo + hi), (hi - lo) * (hi - lo) / 12.0};
}

/// Equal mixture of N(center - a, sd^2) and N(center + a, sd^2).
inline Distribution symmetric_mixture(double center, double a, double sd) {
  if (!(sd > 0.0)) throw Error(ErrorCode::Config, "mixture truth needs sd > 0");
  Distribution d;
  d.name = "mixture(+-" + std::to_string(a) + ", sd " + std::to_string(sd) + ")";
  d.sample = [center, a, sd](std::mt19937_64& r) {
    const double sign = std::uniform_real_distribution<double>(0.0, 1.0)(r) < 0.5 ? -1.0 : 1.0;
    return center + sign * a + sd * std::normal_distribution<double>(0.0, 1.0)(r);
  };
  d.pdf = [center, a, sd](double x) {
    return 0.5 * (normal::pdf(x, center - a, sd) + normal::pdf(x, center + a, sd));
  };
  d.support = [center, a, sd](double tail) {
    const double z = normal::upper_tail_point(tail) * sd;
    return Interval{center - std::abs(a) - z, center + std::abs(a) + z};
  };
  d.mean = center;
  d.variance = a * a + sd * sd;
  return d;
}

// Built-in alternatives for a null signal N(mu, sd^2).
inline Distribution mean_shift_alternative(double mu, double sd, double shift) {
  return normal_distribution(mu + shift, sd);
}
inline Distribution variance_inflation_alternative(double mu, double sd, double factor) {
  return normal_distribution(mu, sd * factor);
}

// ---------------------------------------------------------------------------
// Procedures applied to each simulated sample

struct Procedure {
  std::string name;
  std::function<TestReport(std::span<const double> y)> run;
};

/// Fixed k = 1 test in the N(theta,1) / N(0, eta^2) model with the sample-variance plug-in.
inline Procedure example2_procedure(double theta0, double alpha) {
  return {"example2 W1 (sample-variance plug-in)", [theta0, alpha](std::span<const double> y) {
            DataDrivenOptions o;
            o.alpha = alpha;
            o.kind = StatKind::W;
            return data_driven_test(plugin_scores_example2(y, theta0), o);
          }};
}

/// Simple-case data-driven U_S over the d components of a fixed system.
inline Procedure simple_data_driven_procedure(std::shared_ptr<const ScoreSystem> sys,
                                              DataDrivenOptions opt, EvaluationOptions eval = {}) {
  return {"data-driven U_S (d=" + std::to_string(sys->k()) + ", " + opt.penalty.name + ")",
          [sys, opt, eval](std::span<const double> y) { return data_driven_test(*sys, y, opt, eval); }};
}

/// Composite data-driven W_S with the moment plug-in for eta.
inline Procedure composite_data_driven_procedure(std::shared_ptr<const ConvolvedModel> model,
                                                 Vector theta0, DataDrivenOptions opt,
                                                 PluginOptions plugin = {}) {
  if (!plugin.signal_variance) {
    plugin.signal_variance = signal_moments(model->signal(), theta0, model->spec()).second;
  }
  return {"data-driven W_S (d=" + std::to_string(model->signal().dim) + ", " + opt.penalty.name + ")",
          [model, theta0, opt, plugin](std::span<const double> y) {
            return data_driven_test(*model, theta0, y, opt, plugin);
          }};
}

/// Fixed-dimension U_k with reference chi2_k.
inline Procedure fixed_dimension_procedure(std::shared_ptr<const ScoreSystem> sys, double alpha,
                                           EvaluationOptions eval = {}) {
  return {"fixed U_" + std::to_string(sys->k()), [sys, alpha, eval](std::span<const double> y) {
            const EstimatedScores e = exact_scores(*sys, y, eval);
            TestReport r;
            r.kind = StatKind::U;
            r.alpha = alpha;
            r.n = static_cast<long long>(y.size());
            r.provenance = e.provenance;
            r.statistics = nested_statistics(e);
            r.selected_S = sys->k();
            r.reference_df = sys->k();
            r.stat_at_S = r.statistics.back();
            const Decision d = decide(r.stat_at_S, sys->k(), alpha);
            r.p_value = d.p_value;
            r.reject = d.reject;
            r.p_value_df_at_S = d.p_value;
            return r;
          }};
}

// ---------------------------------------------------------------------------
// Scenarios

struct ScenarioSpec {
  Distribution signal_truth;
  Distribution noise_truth;
  Procedure procedure;
  int n = 100;
  int replications = 100;
  std::uint64_t seed = 1;
  unsigned workers = 1;

  void validate() const {
    if (n < 2) throw Error(ErrorCode::Config, "simulation: n must be >= 2");
    if (replications < 1) throw Error(ErrorCode::Config, "simulation: replications must be >= 1");
    if (!signal_truth.sample || !noise_truth.sample || !procedure.run) {
      throw Error(ErrorCode::Config, "simulation: truth samplers and procedure are required");
    }
  }
};

inline std::vector<double> sample_observations(const ScenarioSpec& s, std::uint64_t replication) {
  auto rx = derive_stream(s.seed, replication, StreamRole::signal);
  auto re = derive_stream(s.seed, replication, StreamRole::noise);
  std::vector<double> y(static_cast<std::size_t>(s.n));
  for (double& v : y) v = s.signal_truth.sample(rx);
  for (double& v : y) v += s.noise_truth.sample(re);
  return y;
}

struct Replication {
  double statistic = 0.0;
  double p_value = 1.0;
  int selected_S = 1;
  bool reject = false;
};

inline std::vector<Replication> run_replications(const ScenarioSpec& s) {
  s.validate();
  std::vector<Replication> out(static_cast<std::size_t>(s.replications));
  parallel_for(
      out.size(),
      [&](std::size_t i) {
        const std::vector<double> y = sample_observations(s, i);
        const TestReport r = s.procedure.run(y);
        out[i] = {r.stat_at_S, r.p_value, r.selected_S, r.reject};
      },
      s.workers);
  return out;
}

struct Proportion {
  double value = 0.0;
  double se = 0.0;
};

inline Proportion proportion(std::size_t hits, std::size_t total) {
  const double p = static_cast<double>(hits) / static_cast<double>(total);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(total))};
}

/// Kolmogorov-Smirnov distance between a sample and chi2_df.
inline double ks_distance_chi2(std::vector<double> x, int df) {
  std::sort(x.begin(), x.end());
  const double r = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = chi2_cdf(df, std::max(x[i], 0.0));
    d = std::max({d, (static_cast<double>(i) + 1.0) / r - f, f - static_cast<double>(i) / r});
  }
  return d;
}

struct CalibrationResult {
  std::vector<Replication> replications;
  int reference_df = 1;
  double ks_distance = 0.0;
  Proportion level;
  Proportion fraction_S1;
  double mean_statistic = 0.0;
  double mean_statistic_se = 0.0;

  /// Sorted statistics paired with the empirical CDF, for overlay plots.
  std::vector<std::pair<double, double>> empirical_cdf() const {
    std::vector<double> x;
    for (const auto& r : replications) x.push_back(r.statistic);
    std::sort(x.begin(), x.end());
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < x.size(); ++i) out.emplace_back(x[i], (i + 1.0) / x.size());
    return out;
  }
};

inline CalibrationResult summarize_null(std::vector<Replication> reps, int reference_df) {
  CalibrationResult c;
  c.reference_df = reference_df;
  std::vector<double> stats;
  std::size_t rejects = 0, s1 = 0;
  double sum = 0.0, sum2 = 0.0;
  for (const auto& r : reps) {
    stats.push_back(r.statistic);
    rejects += r.reject ? 1 : 0;
    s1 += r.selected_S == 1 ? 1 : 0;
    sum += r.statistic;
    sum2 += r.statistic * r.statistic;
  }
  const double R = static_cast<double>(reps.size());
  c.ks_distance = ks_distance_chi2(stats, reference_df);
  c.level = proportion(rejects, reps.size());
  c.fraction_S1 = proportion(s1, reps.size());
  c.mean_statistic = sum / R;
  const double var = reps.size() > 1 ? (sum2 - R * c.mean_statistic * c.mean_statistic) / (R - 1.0) : 0.0;
  c.mean_statistic_se = std::sqrt(std::max(var, 0.0) / R);
  c.replications = std::move(reps);
  return c;
}

/// Runs the scenario under its (null) truth. The reference is chi2_1 unless
/// the procedure reports a fixed dimension.
inline CalibrationResult calibrate_null(const ScenarioSpec& s, int reference_df = 1) {
  return summarize_null(run_replications(s), reference_df);
}

struct PowerPoint {
  int n = 0;
  Proportion rate;
  double mean_S = 0.0;
};

/// Rejection rate per n. Each grid cell uses its own master seed derived from
/// (seed, n) so cells are independent.
inline std::vector<PowerPoint> power_curve(const ScenarioSpec& base, std::span<const int> n_grid) {
  std::vector<PowerPoint> out;
  for (int n : n_grid) {
    ScenarioSpec s = base;
    s.n = n;
    s.seed = derive_key(base.seed, static_cast<std::uint64_t>(n), 0x706f776572ULL);
    const auto reps = run_replications(s);
    std::size_t rej = 0;
    double sum_s = 0.0;
    for (const auto& r : reps) {
      rej += r.reject ? 1 : 0;
      sum_s += r.selected_S;
    }
    out.push_back({n, proportion(rej, reps.size()), sum_s / static_cast<double>(reps.size())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// D1 / C1 scan

enum class ScanMode { automatic, quadrature, monte_carlo };

struct D1ScanOptions {
  ScanMode mode = ScanMode::automatic;
  /// Quadrature-mode threshold on |E l*_i|.
  double tolerance = 1e-6;
  /// Monte Carlo mode: sample size, threshold in standard errors, and seed.
  int mc_samples = 200000;
  double mc_standard_errors = 4.0;
  std::uint64_t seed = 1;
  QuadratureSpec spec;
};

struct D1ScanResult {
  Vector expectations;
  Vector standard_errors;  // Monte Carlo mode only
  std::optional<int> K;
  double C_K = 0.0;
  ScanMode mode = ScanMode::quadrature;
  std::vector<double> thresholds;
};

/// Density of X + e for independent X ~ f, e ~ h, by quadrature.
inline double convolution_density(const Distribution& f, const Distribution& h, double y,
                                  const QuadratureSpec& spec) {
  const double tau2 = spec.truncation_mass * spec.truncation_mass;
  const Interval fs = f.support(tau2);
  const Interval hs = h.support(tau2);
  const Interval range = intersect(fs, {y - hs.hi, y - hs.lo});
  if (range.empty()) return 0.0;
  QuadratureSpec s = spec;
  s.abs_tol = 1e-300;
  auto integrand = [&](double x, std::span<double> v) { v[0] = f.pdf(x) * h.pdf(y - x); };
  return integrate_vector(integrand, 1, range, s, 2)[0];
}

/// E_{F*H} l*_i for i = 1..d and the first index K with a detectable nonzero mean.
inline D1ScanResult d1_scan(const Distribution& signal_truth, const Distribution& noise_truth,
                            const ScoreSystem& sys, const D1ScanOptions& opt = {}) {
  D1ScanResult res;
  const int d = sys.k();
  ScanMode mode = opt.mode;
  if (mode == ScanMode::automatic) {
    mode = signal_truth.has_density() && noise_truth.has_density() ? ScanMode::quadrature
                                                                   : ScanMode::monte_carlo;
  }
  if (mode == ScanMode::quadrature && !(signal_truth.has_density() && noise_truth.has_density())) {
    throw Error(ErrorCode::Config, "d1 scan: quadrature mode needs truth densities");
  }
  res.mode = mode;
  res.thresholds.assign(static_cast<std::size_t>(d), opt.tolerance);

  if (mode == ScanMode::quadrature) {
    const Interval fs = signal_truth.support(opt.spec.truncation_mass);
    const Interval hs = noise_truth.support(opt.spec.truncation_mass);
    const Interval window{fs.lo + hs.lo, fs.hi + hs.hi};
    QuadratureSpec outer = opt.spec;
    outer.rel_tol = opt.spec.rel_tol * 10.0;
    outer.abs_tol = std::max(opt.spec.abs_tol, 1e-13);
    outer.max_subdivisions = opt.spec.max_subdivisions * 4;
    auto integrand = [&](double y, std::span<double> v) {
      const double p = convolution_density(signal_truth, noise_truth, y, opt.spec);
      if (p == 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        return;
      }
      sys.score(y, v);
      for (double& x : v) x *= p;
    };
    const auto r = integrate_vector(integrand, static_cast<std::size_t>(d), window, outer, 8);
    res.expectations = Eigen::Map<const Vector>(r.data(), d);
  } else {
    if (opt.mc_samples < 2) throw Error(ErrorCode::Config, "d1 scan: mc_samples must be >= 2");
    ScenarioSpec s;
    s.signal_truth = signal_truth;
    s.noise_truth = noise_truth;
    s.n = opt.mc_samples;
    s.seed = opt.seed;
    const std::vector<double> y = sample_observations(s, 0);
    const Matrix scores = evaluate_scores(sys, y);
    res.expectations = scores.colwise().mean().transpose();
    const Matrix centered = scores.rowwise() - res.expectations.transpose();
    res.standard_errors = (centered.colwise().squaredNorm().transpose() /
                           (static_cast<double>(y.size()) - 1.0) / static_cast<double>(y.size()))
                              .cwiseSqrt();
    for (int i = 0; i < d; ++i) {
      res.thresholds[static_cast<std::size_t>(i)] = opt.mc_standard_errors * res.standard_errors[i];
    }
  }
  for (int i = 0; i < d; ++i) {
    if (std::abs(res.expectations[i]) > res.thresholds[static_cast<std::size_t>(i)]) {
      res.K = i + 1;
      res.C_K = res.expectations[i];
      break;
    }
  }
  return res;
}

}  // namespace dscore
