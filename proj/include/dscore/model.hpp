#pragma once

// Observable densities g(y; (theta, eta)) = int f_theta(s) h_eta(y - s) ds and
// their raw scores. With known noise the eta vector is empty and g is q.

#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "dscore/families.hpp"
#include "dscore/quadrature.hpp"

namespace dscore {

/// Value of the observable density plus its parameter derivatives at one y.
struct ConvolutionValue {
  double density = 0.0;
  bool positive = false;  // indicator 1[g > density_floor]
  Vector d_theta;         // d g / d theta (empty unless requested)
  Vector d_eta;           // d g / d eta   (empty unless requested)
};

enum class ConvolutionPath {
  quadrature,
  /// Closed form for N(theta,1) signal with centered Gaussian noise; falls
  /// back to quadrature for any other pair.
  closed_form_when_available,
};

class ConvolvedModel {
 public:
  ConvolvedModel(SignalFamily signal, NoiseModel noise, QuadratureSpec spec = {},
                 double density_floor = 1e-300,
                 ConvolutionPath path = ConvolutionPath::quadrature)
      : signal_(std::move(signal)),
        noise_(std::move(noise)),
        spec_(spec),
        floor_(density_floor),
        path_(path) {
    spec_.validate();
  }

  const SignalFamily& signal() const noexcept { return signal_; }
  const NoiseModel& noise() const noexcept { return noise_; }
  const QuadratureSpec& spec() const noexcept { return spec_; }
  double density_floor() const noexcept { return floor_; }
  ConvolutionPath path() const noexcept { return path_; }

  bool has_closed_form() const noexcept {
    return path_ == ConvolutionPath::closed_form_when_available &&
           signal_.unit_gaussian_location && static_cast<bool>(noise_.gaussian_sd);
  }

  /// Evaluator bound to one (theta, eta). Holds the support windows and the
  /// bound point evaluators so repeated y-evaluations do no setup work. It
  /// owns copies of everything it needs and may outlive the model.
  class Bound {
   public:
    /// Observable window: outside it the density is reported as 0.
    Interval observable() const noexcept { return observable_; }
    /// Integration range in s for a given y (may be empty).
    Interval s_range(double y) const noexcept {
      return intersect(signal_deep_, Interval{y - noise_deep_.hi, y - noise_deep_.lo});
    }
    const PointEval& signal_eval() const noexcept { return f_; }
    const PointEval& noise_eval() const noexcept { return h_; }
    int k() const noexcept { return k_; }
    int m() const noexcept { return m_; }
    const QuadratureSpec& spec() const noexcept { return spec_; }
    double density_floor() const noexcept { return floor_; }

    ConvolutionValue evaluate(double y, bool want_theta, bool want_eta) const {
      ConvolutionValue out;
      if (want_theta) out.d_theta = Vector::Zero(k_);
      if (want_eta) out.d_eta = Vector::Zero(m_);
      if (closed_form_) return evaluate_closed_form(y, want_theta, want_eta, std::move(out));
      if (!observable_.contains(y)) return out;
      const Interval range = s_range(y);
      if (range.empty()) return out;

      const auto k = static_cast<std::size_t>(want_theta ? k_ : 0);
      const auto m = static_cast<std::size_t>(want_eta ? m_ : 0);
      const std::size_t dim = 1 + k + m;
      std::array<double, 2 * ExponentialFamily::kMaxBasis> fg{};
      std::array<double, 2 * ExponentialFamily::kMaxBasis> hg{};
      auto integrand = [&](double s, std::span<double> v) {
        const double fs = f_(s, std::span<double>(fg.data(), k));
        const double hs = h_(y - s, std::span<double>(hg.data(), m));
        v[0] = fs * hs;
        for (std::size_t j = 0; j < k; ++j) v[1 + j] = fg[j] * hs;
        for (std::size_t j = 0; j < m; ++j) v[1 + k + j] = fs * hg[j];
      };
      QuadratureSpec s = spec_;
      s.abs_tol = floor_;
      const auto r = integrate_vector(integrand, dim, range, s, 2);
      out.density = r[0];
      out.positive = r[0] > floor_;
      if (!out.positive) {
        out.density = 0.0;
        return out;
      }
      for (std::size_t j = 0; j < k; ++j) out.d_theta[static_cast<Eigen::Index>(j)] = r[1 + j];
      for (std::size_t j = 0; j < m; ++j) out.d_eta[static_cast<Eigen::Index>(j)] = r[1 + k + j];
      return out;
    }

   private:
    friend class ConvolvedModel;

    ConvolutionValue evaluate_closed_form(double y, bool want_theta, bool want_eta,
                                          ConvolutionValue out) const {
      const double var = 1.0 + sd_ * sd_;
      const double r = y - theta0_;
      out.density = normal::pdf(y, theta0_, std::sqrt(var));
      out.positive = out.density > floor_;
      if (!out.positive) {
        out.density = 0.0;
        return out;
      }
      if (want_theta) out.d_theta[0] = out.density * r / var;
      if (want_eta && m_ == 1) {
        const double eta = sd_;
        out.d_eta[0] = out.density * (r * r * eta / (var * var) - eta / var);
      }
      return out;
    }

    QuadratureSpec spec_;
    double floor_ = 0.0;
    PointEval f_;
    PointEval h_;
    Interval signal_deep_;
    Interval noise_deep_;
    Interval observable_;
    int k_ = 0;
    int m_ = 0;
    bool closed_form_ = false;
    double theta0_ = 0.0;
    double sd_ = 0.0;
  };

  /// Binds the model at (theta, eta). For known noise pass an empty eta.
  Bound bind(const Vector& theta, const Vector& eta) const {
    if (theta.size() != signal_.dim) {
      throw Error(ErrorCode::DimensionMismatch, "theta dimension does not match the signal family");
    }
    if (eta.size() != noise_.dim) {
      throw Error(ErrorCode::DimensionMismatch, "eta dimension does not match the noise model");
    }
    Bound b;
    b.spec_ = spec_;
    b.floor_ = floor_;
    b.k_ = signal_.dim;
    b.m_ = noise_.dim;
    if (signal_.dim > ExponentialFamily::kMaxBasis || noise_.dim > ExponentialFamily::kMaxBasis) {
      throw Error(ErrorCode::DimensionMismatch, "parameter dimension exceeds 64");
    }
    if (has_closed_form()) {
      b.closed_form_ = true;
      b.theta0_ = theta[0];
      b.sd_ = noise_.gaussian_sd(eta);
    }
    b.f_ = signal_.bind(theta);
    b.h_ = noise_.bind(eta);
    const double tau = spec_.truncation_mass;
    // Integration uses windows truncated at tau^2 so the truncation error sits
    // far below tau; the observable window uses tau itself.
    b.signal_deep_ = signal_.support(theta, tau * tau);
    b.noise_deep_ = noise_.support(eta, tau * tau);
    const Interval fs = signal_.support(theta, tau);
    const Interval hs = noise_.support(eta, tau);
    b.observable_ = {fs.lo + hs.lo, fs.hi + hs.hi};
    return b;
  }

  Bound bind(const Vector& theta) const { return bind(theta, default_eta()); }

  /// q(y; theta) with the 1[q > floor] indicator. For parametric noise the
  /// reference eta_null is used.
  ConvolutionValue q_density(const Vector& theta, double y) const {
    return bind(theta).evaluate(y, false, false);
  }

  /// g(y; (theta, eta)).
  ConvolutionValue g_density(const Vector& theta, const Vector& eta, double y) const {
    return bind(theta, eta).evaluate(y, false, false);
  }

  /// (d/dtheta q) / q, zero where the indicator is false.
  Vector score_theta(const Vector& theta, const Vector& eta, double y) const {
    const ConvolutionValue v = bind(theta, eta).evaluate(y, true, false);
    if (!v.positive) return Vector::Zero(signal_.dim);
    return v.d_theta / v.density;
  }

  Vector score_theta(const Vector& theta, double y) const {
    return score_theta(theta, default_eta(), y);
  }

  /// (d/deta g) / g, zero where the indicator is false.
  Vector score_eta(const Vector& theta, const Vector& eta, double y) const {
    if (!noise_.parametric()) {
      throw Error(ErrorCode::NotParametricNoise, "score_eta needs a parametric noise model");
    }
    const ConvolutionValue v = bind(theta, eta).evaluate(y, false, true);
    if (!v.positive) return Vector::Zero(noise_.dim);
    return v.d_eta / v.density;
  }

 private:
  Vector default_eta() const { return noise_.parametric() ? noise_.eta_null : Vector(0); }

  SignalFamily signal_;
  NoiseModel noise_;
  QuadratureSpec spec_;
  double floor_;
  ConvolutionPath path_;
};

}  // namespace dscore
