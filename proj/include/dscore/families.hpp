#pragma once

// Parametric signal families f_theta and noise models h_eta.
//
// Every family is "bound" to a parameter before pointwise evaluation: binding
// does the per-parameter work once (normalizers, tilted means) and returns a
// cheap point evaluator `(x, grad) -> value` for use inside quadrature loops.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dscore/error.hpp"
#include "dscore/normal.hpp"
#include "dscore/quadrature.hpp"

namespace dscore {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Point evaluator: returns the density at x and, when `grad` is non-empty,
/// writes the parameter gradient of the density into it.
using PointEval = std::function<double(double x, std::span<double> grad)>;

/// Support window of a parametric density for a given tail mass per end.
using SupportFn = std::function<Interval(const Vector& param, double tail_mass)>;

/// A fixed one-dimensional density with its CDF, used as the null signal f0.
struct BaseDensity {
  std::string name;
  std::function<double(double)> pdf;
  std::function<double(double)> cdf;
  std::function<Interval(double tail_mass)> support;
};

inline BaseDensity normal_base(double mean = 0.0, double sd = 1.0) {
  if (!(sd > 0.0)) throw Error(ErrorCode::Config, "normal base density needs sd > 0");
  return {"normal",
          [mean, sd](double x) { return normal::pdf(x, mean, sd); },
          [mean, sd](double x) { return normal::cdf(x, mean, sd); },
          [mean, sd](double tail) {
            const double z = normal::upper_tail_point(tail);
            return Interval{mean - z * sd, mean + z * sd};
          }};
}

inline BaseDensity uniform_base(double lo = 0.0, double hi = 1.0) {
  if (!(hi > lo)) throw Error(ErrorCode::Config, "uniform base density needs lo < hi");
  return {"uniform",
          [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 / (hi - lo) : 0.0; },
          [lo, hi](double x) { return std::clamp((x - lo) / (hi - lo), 0.0, 1.0); },
          [lo, hi](double) { return Interval{lo, hi}; }};
}

class ExponentialFamily;

/// Parametric signal family {f_theta : theta in R^k}.
struct SignalFamily {
  std::string name;
  int dim = 0;
  Vector theta_null;
  Interval support_hint;
  std::function<PointEval(const Vector& theta)> bind;
  SupportFn support;
  /// Set when the family is an exponential tilt of f0, enabling the
  /// ((u f0) * h) / (f0 * h) - E0 u score path. The family then uses the
  /// first `dim` basis components.
  std::shared_ptr<const ExponentialFamily> exponential;
  /// True for {N(theta, 1)}; enables the closed-form convolution with Gaussian noise.
  bool unit_gaussian_location = false;

  double density(const Vector& theta, double x) const { return bind(theta)(x, {}); }

  Vector grad_theta_density(const Vector& theta, double x) const {
    Vector g(dim);
    bind(theta)(x, std::span<double>(g.data(), static_cast<std::size_t>(dim)));
    return g;
  }
};

/// Noise density: either known (dim 0) or a parametric family {h_eta}.
struct NoiseModel {
  std::string name;
  int dim = 0;
  Vector eta_null;
  Interval support_hint;
  std::function<PointEval(const Vector& eta)> bind;
  SupportFn support;
  /// Moment inversion used by plug-in estimators: the eta whose noise
  /// variance equals the argument. Optional.
  std::function<Vector(double noise_variance)> eta_from_variance;
  /// Standard deviation as a function of eta when the noise is centered Gaussian.
  std::function<double(const Vector& eta)> gaussian_sd;

  bool parametric() const noexcept { return dim > 0; }

  double density(const Vector& eta, double e) const { return bind(eta)(e, {}); }

  Vector grad_eta_density(const Vector& eta, double e) const {
    if (!parametric()) throw Error(ErrorCode::NotParametricNoise, name + " has no parameter");
    Vector g(dim);
    bind(eta)(e, std::span<double>(g.data(), static_cast<std::size_t>(dim)));
    return g;
  }
};

// ---------------------------------------------------------------------------
// Exponential families f_theta = f0 * b(theta) * exp(theta . u)

class ExponentialFamily : public std::enable_shared_from_this<ExponentialFamily> {
 public:
  static constexpr int kMaxBasis = 64;

  /// Writes the k basis values u_1(x)..u_k(x) into `out`.
  using Basis = std::function<void(double x, std::span<double> out)>;

  /// Per-parameter quantities computed once by quadrature.
  struct Tilt {
    double b = 1.0;     // normalizer b(theta)
    Vector mean_basis;  // E_theta u(X)
    Interval window;    // support window at the spec's truncation mass
  };

  static std::shared_ptr<ExponentialFamily> create(BaseDensity f0, Basis basis, int k,
                                                   QuadratureSpec spec = {},
                                                   double admissible_box = 5.0) {
    return std::shared_ptr<ExponentialFamily>(
        new ExponentialFamily(std::move(f0), std::move(basis), k, spec, admissible_box));
  }

  int dim() const noexcept { return k_; }
  const BaseDensity& base() const noexcept { return f0_; }
  const QuadratureSpec& spec() const noexcept { return spec_; }
  double admissible_box() const noexcept { return box_; }

  void basis(double x, std::span<double> out) const { u_(x, out); }

  Vector basis(double x) const {
    Vector u(k_);
    u_(x, std::span<double>(u.data(), static_cast<std::size_t>(k_)));
    return u;
  }

  /// Normalizer, tilted basis mean and support window at theta (cached).
  Tilt tilt(const Vector& theta) const {
    check_theta(theta);
    std::vector<double> key(theta.data(), theta.data() + theta.size());
    {
      std::shared_lock lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    Tilt t = compute_tilt(theta);
    std::unique_lock lock(mutex_);
    if (cache_.size() > 4096) cache_.clear();
    cache_.insert_or_assign(std::move(key), t);
    return t;
  }

  double normalizer(const Vector& theta) const { return tilt(theta).b; }

  double density(const Vector& theta, double x) const {
    const Tilt t = tilt(theta);
    const double f0 = f0_.pdf(x);
    if (f0 == 0.0) return 0.0;
    return f0 * t.b * std::exp(theta.dot(basis(x)));
  }

  /// Signal family using the first `level` basis components (level <= k).
  SignalFamily as_family(int level) const;

 private:
  ExponentialFamily(BaseDensity f0, Basis u, int k, QuadratureSpec spec, double box)
      : f0_(std::move(f0)), u_(std::move(u)), k_(k), spec_(spec), box_(box) {
    if (k_ < 1 || k_ > kMaxBasis) {
      throw Error(ErrorCode::Config, "exponential family needs between 1 and 64 basis functions");
    }
    spec_.validate();
  }

  void check_theta(const Vector& theta) const {
    if (theta.size() != k_) {
      throw Error(ErrorCode::DimensionMismatch, "theta has the wrong dimension for this family");
    }
    if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > box_) {
      throw Error(ErrorCode::Divergent, "theta outside the admissible box |theta|_inf <= " +
                                            std::to_string(box_));
    }
  }

  Tilt compute_tilt(const Vector& theta) const {
    auto unnormalized = [this, &theta](double x) {
      const double f0 = f0_.pdf(x);
      return f0 == 0.0 ? 0.0 : f0 * std::exp(theta.dot(basis(x)));
    };
    Tilt t;
    try {
      t.window = truncate_support(unnormalized, f0_.support(spec_.truncation_mass), spec_);
      // Integrate over a wider window than the reported one so the normalizer
      // is not biased by the truncation itself.
      QuadratureSpec deep = spec_;
      deep.truncation_mass = spec_.truncation_mass * spec_.truncation_mass;
      const Interval wide = truncate_support(unnormalized, t.window, deep);
      const std::size_t dim = static_cast<std::size_t>(k_) + 1;
      std::vector<double> u(static_cast<std::size_t>(k_));
      auto integrand = [&](double x, std::span<double> out) {
        const double f0 = f0_.pdf(x);
        if (f0 == 0.0) {
          std::fill(out.begin(), out.end(), 0.0);
          return;
        }
        u_(x, std::span<double>(u));
        double dot = 0.0;
        for (int j = 0; j < k_; ++j) dot += theta[j] * u[static_cast<std::size_t>(j)];
        const double w = f0 * std::exp(dot);
        out[0] = w;
        for (std::size_t j = 0; j < u.size(); ++j) out[j + 1] = w * u[j];
      };
      const auto moments = integrate_vector(integrand, dim, wide, spec_, 8);
      if (!(moments[0] > 0.0) || !std::isfinite(moments[0])) {
        throw Error(ErrorCode::Divergent, "normalizing integral is not positive and finite");
      }
      t.b = 1.0 / moments[0];
      t.mean_basis.resize(k_);
      for (int j = 0; j < k_; ++j) t.mean_basis[j] = moments[static_cast<std::size_t>(j) + 1] * t.b;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Divergent) throw;
      throw Error(ErrorCode::Divergent, std::string("normalizer b(theta) failed: ") + e.what());
    }
    return t;
  }

  BaseDensity f0_;
  Basis u_;
  int k_;
  QuadratureSpec spec_;
  double box_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::vector<double>, Tilt> cache_;
};

inline SignalFamily ExponentialFamily::as_family(int level) const {
  if (level < 1 || level > k_) throw Error(ErrorCode::DimensionMismatch, "level out of range");
  auto self = shared_from_this();
  auto pad = [self, level](const Vector& theta) {
    if (theta.size() != level) {
      throw Error(ErrorCode::DimensionMismatch, "theta has the wrong dimension for this level");
    }
    Vector full = Vector::Zero(self->dim());
    full.head(level) = theta;
    return full;
  };

  SignalFamily fam;
  fam.name = "exponential(" + f0_.name + ", level " + std::to_string(level) + ")";
  fam.dim = level;
  fam.theta_null = Vector::Zero(level);
  fam.support_hint = f0_.support(spec_.truncation_mass);
  fam.exponential = self;
  fam.bind = [self, pad, level](const Vector& theta) -> PointEval {
    const Vector full = pad(theta);
    const Tilt t = self->tilt(full);
    const bool at_origin = full.isZero(0.0);
    return [self, full, t, at_origin, level](double x, std::span<double> grad) {
      const double f0 = self->base().pdf(x);
      if (f0 == 0.0) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return 0.0;
      }
      double value = f0 * t.b;
      if (!at_origin || !grad.empty()) {
        std::array<double, kMaxBasis> ub{};
        const auto k = static_cast<std::size_t>(self->dim());
        self->basis(x, std::span<double>(ub.data(), k));
        if (!at_origin) {
          double dot = 0.0;
          for (std::size_t j = 0; j < k; ++j) dot += full[static_cast<Eigen::Index>(j)] * ub[j];
          value *= std::exp(dot);
        }
        for (std::size_t j = 0; j < grad.size() && j < static_cast<std::size_t>(level); ++j) {
          grad[j] = value * (ub[j] - t.mean_basis[static_cast<Eigen::Index>(j)]);
        }
      }
      return value;
    };
  };
  fam.support = [self, pad](const Vector& theta, double tail_mass) {
    const Vector full = pad(theta);
    const Tilt t = self->tilt(full);
    if (tail_mass == self->spec().truncation_mass) return t.window;
    QuadratureSpec s = self->spec();
    s.truncation_mass = tail_mass;
    auto unnormalized = [&](double x) {
      const double f0 = self->base().pdf(x);
      return f0 == 0.0 ? 0.0 : f0 * std::exp(full.dot(self->basis(x)));
    };
    return truncate_support(unnormalized, t.window, s);
  };
  return fam;
}

/// Nested levels 1..d over one shared basis. Level j evaluates the top-level
/// family at theta zero-padded to dimension d.
struct NestedFamily {
  std::shared_ptr<const ExponentialFamily> top;
  std::vector<SignalFamily> levels;

  int max_dim() const noexcept { return static_cast<int>(levels.size()); }
  const SignalFamily& level(int k) const { return levels.at(static_cast<std::size_t>(k - 1)); }
};

/// Centered orthonormal cosine system u_j(x) = sqrt(2) cos(j pi F0(x)).
inline NestedFamily make_nested_cosine_family(const BaseDensity& f0, int d,
                                              const QuadratureSpec& spec = {}) {
  if (d < 1) throw Error(ErrorCode::Config, "cosine family needs d >= 1");

  // The CDF must be monotone on the support and strictly increasing where f0 > 0.
  const Interval window = f0.support(spec.truncation_mass);
  constexpr int kProbes = 201;
  double prev = f0.cdf(window.lo);
  if (!(prev >= 0.0 && prev <= 1.0)) throw Error(ErrorCode::BadCdf, "F0 outside [0, 1]");
  for (int i = 1; i < kProbes; ++i) {
    const double x = window.lo + window.width() * i / (kProbes - 1);
    const double xm = x - 0.5 * window.width() / (kProbes - 1);
    const double cur = f0.cdf(x);
    if (!(cur >= prev) || cur > 1.0 || (f0.pdf(xm) > 0.0 && prev < 1.0 && !(cur > prev))) {
      throw Error(ErrorCode::BadCdf, "F0 is not strictly increasing on the support of f0");
    }
    prev = cur;
  }

  auto cdf = f0.cdf;
  ExponentialFamily::Basis basis = [cdf, d](double x, std::span<double> out) {
    // cos(j phi) by the Chebyshev recurrence T_{j+1} = 2c T_j - T_{j-1}.
    const double c = std::cos(std::numbers::pi * cdf(x));
    double t_prev = 1.0;
    double t_cur = c;
    for (int j = 0; j < d; ++j) {
      out[static_cast<std::size_t>(j)] = std::numbers::sqrt2 * t_cur;
      const double t_next = 2.0 * c * t_cur - t_prev;
      t_prev = t_cur;
      t_cur = t_next;
    }
  };
  auto top = ExponentialFamily::create(f0, std::move(basis), d, spec);
  NestedFamily nest;
  nest.top = top;
  for (int k = 1; k <= d; ++k) {
    SignalFamily level = top->as_family(k);
    level.name = "cosine(" + f0.name + ", level " + std::to_string(k) + ")";
    nest.levels.push_back(std::move(level));
  }
  return nest;
}

// ---------------------------------------------------------------------------
// Built-in Gaussian families.

/// {N(theta, 1)} with analytic location gradient.
inline SignalFamily gaussian_location_family(double theta_null = 0.0) {
  SignalFamily fam;
  fam.name = "gaussian-location";
  fam.unit_gaussian_location = true;
  fam.dim = 1;
  fam.theta_null = Vector::Constant(1, theta_null);
  fam.support_hint = {theta_null - 1.0, theta_null + 1.0};
  fam.bind = [](const Vector& theta) -> PointEval {
    const double mu = theta[0];
    return [mu](double x, std::span<double> grad) {
      const double v = normal::pdf(x, mu, 1.0);
      if (!grad.empty()) grad[0] = (x - mu) * v;
      return v;
    };
  };
  fam.support = [](const Vector& theta, double tail) {
    const double z = normal::upper_tail_point(tail);
    return Interval{theta[0] - z, theta[0] + z};
  };
  return fam;
}

/// {N(0, eta^2) : eta > 0} with analytic scale gradient; eta_null = 1.
inline NoiseModel gaussian_noise_family(double eta_null = 1.0) {
  NoiseModel noise;
  noise.name = "gaussian-scale";
  noise.dim = 1;
  noise.eta_null = Vector::Constant(1, eta_null);
  noise.support_hint = {-eta_null, eta_null};
  noise.bind = [](const Vector& eta) -> PointEval {
    const double s = eta[0];
    if (!(s > 0.0)) throw Error(ErrorCode::OutOfDomain, "gaussian noise scale must be positive");
    return [s](double e, std::span<double> grad) {
      const double v = normal::pdf(e, 0.0, s);
      if (!grad.empty()) grad[0] = v * (e * e / (s * s * s) - 1.0 / s);
      return v;
    };
  };
  noise.support = [](const Vector& eta, double tail) {
    const double z = normal::upper_tail_point(tail) * std::abs(eta[0]);
    return Interval{-z, z};
  };
  noise.gaussian_sd = [](const Vector& eta) { return std::abs(eta[0]); };
  noise.eta_from_variance = [](double v) {
    if (!(v > 0.0)) throw Error(ErrorCode::DegenerateSample, "noise variance must be positive");
    return Vector::Constant(1, std::sqrt(v));
  };
  return noise;
}

/// Known density h, no parameter.
inline NoiseModel known_noise(std::string name, std::function<double(double)> pdf,
                              std::function<Interval(double)> support) {
  NoiseModel noise;
  noise.name = std::move(name);
  noise.dim = 0;
  noise.eta_null = Vector(0);
  noise.support_hint = support(1e-3);
  noise.bind = [pdf = std::move(pdf)](const Vector&) -> PointEval {
    return [pdf](double e, std::span<double>) { return pdf(e); };
  };
  noise.support = [support = std::move(support)](const Vector&, double tail) { return support(tail); };
  return noise;
}

inline NoiseModel normal_noise(double sd) {
  const BaseDensity b = normal_base(0.0, sd);
  NoiseModel noise = known_noise("normal(0, " + std::to_string(sd) + "^2)", b.pdf, b.support);
  noise.gaussian_sd = [sd](const Vector&) { return sd; };
  return noise;
}

inline NoiseModel uniform_noise(double lo, double hi) {
  const BaseDensity b = uniform_base(lo, hi);
  return known_noise("uniform", b.pdf, b.support);
}

/// Wraps a signal family so its theta-gradient comes from central differences
/// (step 1e-5 * max(1, |theta_j|)) instead of the analytic path.
inline SignalFamily with_numeric_gradient(SignalFamily inner) {
  SignalFamily fam = inner;
  fam.name = inner.name + " [numeric gradient]";
  fam.exponential = nullptr;
  fam.unit_gaussian_location = false;
  auto base_bind = inner.bind;
  const int k = inner.dim;
  fam.bind = [base_bind, k](const Vector& theta) -> PointEval {
    PointEval center = base_bind(theta);
    std::vector<std::pair<PointEval, PointEval>> sides;
    std::vector<double> steps;
    for (int j = 0; j < k; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
      Vector plus = theta;
      Vector minus = theta;
      plus[j] += h;
      minus[j] -= h;
      sides.emplace_back(base_bind(plus), base_bind(minus));
      steps.push_back((plus[j] - minus[j]));
    }
    return [center, sides, steps](double x, std::span<double> grad) {
      const double v = center(x, {});
      for (std::size_t j = 0; j < grad.size(); ++j) {
        grad[j] = (sides[j].first(x, {}) - sides[j].second(x, {})) / steps[j];
      }
      return v;
    };
  };
  return fam;
}

/// Numerical moments of a noise density at eta (diagnostic for E e = 0, 0 < E e^2 < inf).
struct NoiseMoments {
  double mass = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

inline NoiseMoments noise_moments(const NoiseModel& noise, const Vector& eta,
                                  const QuadratureSpec& spec = {}) {
  const PointEval h = noise.bind(eta);
  QuadratureSpec deep = spec;
  deep.truncation_mass = spec.truncation_mass * spec.truncation_mass;
  const Interval w = noise.support(eta, deep.truncation_mass);
  auto integrand = [&](double e, std::span<double> out) {
    const double v = h(e, {});
    out[0] = v;
    out[1] = v * e;
    out[2] = v * e * e;
  };
  const auto m = integrate_vector(integrand, 3, w, spec, 8);
  NoiseMoments r;
  r.mass = m[0];
  r.mean = m[1] / m[0];
  r.variance = m[2] / m[0] - r.mean * r.mean;
  return r;
}

/// Mean and variance of a base density (by quadrature).
inline std::pair<double, double> base_moments(const BaseDensity& f0, const QuadratureSpec& spec = {}) {
  const Interval w = f0.support(spec.truncation_mass * spec.truncation_mass);
  auto integrand = [&](double x, std::span<double> out) {
    const double v = f0.pdf(x);
    out[0] = v;
    out[1] = v * x;
    out[2] = v * x * x;
  };
  const auto m = integrate_vector(integrand, 3, w, spec, 8);
  const double mean = m[1] / m[0];
  return {mean, m[2] / m[0] - mean * mean};
}

}  // namespace dscore
