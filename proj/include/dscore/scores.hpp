#pragma once

// Score systems: the simple-case efficient score l* with L = (E0 l* l*')^-1,
// the composite information blocks and projected efficient score, and the
// plug-in estimated scores used when the nuisance parameter is unknown.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dscore/families.hpp"
#include "dscore/linalg.hpp"
#include "dscore/model.hpp"
#include "dscore/parallel.hpp"
#include "dscore/quadrature.hpp"

namespace dscore {

struct InformationBlocks {
  Matrix i11;  // theta-theta
  Matrix i12;  // theta-eta
  Matrix i21;  // eta-theta
  Matrix i22;  // eta-eta

  Matrix full() const {
    const auto k = i11.rows(), m = i22.rows();
    Matrix out(k + m, k + m);
    out << i11, i12, i21, i22;
    return out;
  }
};

enum class ScorePath {
  automatic,    // exponential route when the signal family is an exponential tilt
  generic,      // integral of the theta-gradient of f against h, over q
  exponential,  // ((u f) * h) / (f * h) - E u
};

/// Which parameter the efficient score targets in the composite case.
enum class Interest { signal, noise };

struct ScoreOptions {
  ScorePath path = ScorePath::automatic;
  /// Tolerances for the outer expectations over y. Empty means derived from
  /// the model spec (relative tolerance x10, four times the subdivisions).
  std::optional<QuadratureSpec> expectation;
};

inline QuadratureSpec expectation_spec(const QuadratureSpec& inner, const ScoreOptions& opt) {
  if (opt.expectation) return *opt.expectation;
  QuadratureSpec s = inner;
  s.rel_tol = inner.rel_tol * 10.0;
  s.abs_tol = std::max(inner.abs_tol, 1e-13);
  s.max_subdivisions = inner.max_subdivisions * 4;
  return s;
}

/// Writes l*(y) into `out` and returns the observable density at y (0 where
/// the indicator is false, in which case `out` is zero).
using ScoreFn = std::function<double(double y, std::span<double> out)>;

class ScoreSystem {
 public:
  ScoreSystem(int k, ScoreFn fn, Matrix information, Vector mean, Interval window,
              std::optional<InformationBlocks> blocks, std::string description)
      : k_(k),
        fn_(std::move(fn)),
        information_(symmetrize(information)),
        L_(spd_inverse(information_, "efficient information")),
        mean_(std::move(mean)),
        window_(window),
        blocks_(std::move(blocks)),
        description_(std::move(description)) {}

  int k() const noexcept { return k_; }

  void score(double y, std::span<double> out) const { fn_(y, out); }

  Vector score(double y) const {
    Vector v(k_);
    fn_(y, std::span<double>(v.data(), static_cast<std::size_t>(k_)));
    return v;
  }

  /// Observable density at y under the null, from the same convolution as l*(y).
  double density(double y) const {
    std::array<double, 2 * ExponentialFamily::kMaxBasis> scratch{};
    return fn_(y, std::span<double>(scratch.data(), static_cast<std::size_t>(k_)));
  }

  /// n x k matrix of l*(y_i).
  Matrix evaluate(std::span<const double> ys, unsigned workers = 1) const {
    Matrix out(static_cast<Eigen::Index>(ys.size()), k_);
    std::vector<std::array<double, ExponentialFamily::kMaxBasis>> rows(ys.size());
    parallel_for(
        ys.size(),
        [&](std::size_t i) {
          fn_(ys[i], std::span<double>(rows[i].data(), static_cast<std::size_t>(k_)));
        },
        workers);
    for (std::size_t i = 0; i < ys.size(); ++i) {
      for (int j = 0; j < k_; ++j) out(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
    return out;
  }

  /// E l* l*' under the null (composite: I*).
  const Matrix& information() const noexcept { return information_; }
  const Matrix& L() const noexcept { return L_; }
  /// E l* under the null by quadrature; a diagnostic that should be ~0.
  const Vector& mean() const noexcept { return mean_; }
  Interval window() const noexcept { return window_; }
  const std::optional<InformationBlocks>& blocks() const noexcept { return blocks_; }
  const std::string& description() const noexcept { return description_; }

  /// The system restricted to the first j components. Its L is the inverse of
  /// the leading j x j block of the information, so nested statistics built
  /// from one system are coherent.
  ScoreSystem leading(int j) const {
    if (j < 1 || j > k_) throw Error(ErrorCode::DimensionMismatch, "leading dimension out of range");
    if (j == k_) return *this;
    const int k = k_;
    ScoreFn inner = fn_;
    ScoreFn fn = [inner, k, j](double y, std::span<double> out) {
      std::array<double, ExponentialFamily::kMaxBasis> full{};
      const double g = inner(y, std::span<double>(full.data(), static_cast<std::size_t>(k)));
      std::copy_n(full.begin(), j, out.begin());
      return g;
    };
    return ScoreSystem(j, std::move(fn), information_.topLeftCorner(j, j), mean_.head(j), window_,
                       std::nullopt, description_ + " [leading " + std::to_string(j) + "]");
  }

 private:
  int k_;
  ScoreFn fn_;
  Matrix information_;
  Matrix L_;
  Vector mean_;
  Interval window_;
  std::optional<InformationBlocks> blocks_;
  std::string description_;
};

namespace detail {

// First and second moments of a score function under its own density:
// returns (E s, E s s') integrated over `window`.
inline std::pair<Vector, Matrix> score_moments(const ScoreFn& fn, int dim, Interval window,
                                               const QuadratureSpec& spec) {
  const auto k = static_cast<std::size_t>(dim);
  const std::size_t n = k + k * (k + 1) / 2;
  auto integrand = [&](double y, std::span<double> v) {
    std::array<double, ExponentialFamily::kMaxBasis> s{};
    const double g = fn(y, std::span<double>(s.data(), k));
    if (g == 0.0) {
      std::fill(v.begin(), v.end(), 0.0);
      return;
    }
    std::size_t c = 0;
    for (std::size_t i = 0; i < k; ++i) v[c++] = g * s[i];
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i; j < k; ++j) v[c++] = g * s[i] * s[j];
    }
  };
  const auto r = integrate_vector(integrand, n, window, spec, 8);
  Vector mean(dim);
  Matrix second(dim, dim);
  std::size_t c = 0;
  for (int i = 0; i < dim; ++i) mean[i] = r[c++];
  for (int i = 0; i < dim; ++i) {
    for (int j = i; j < dim; ++j) second(i, j) = second(j, i) = r[c++];
  }
  return {mean, second};
}

inline Vector padded(const Vector& theta, int d) {
  Vector full = Vector::Zero(d);
  full.head(theta.size()) = theta;
  return full;
}

}  // namespace detail

/// Raw score function of the model at (theta, eta): writes (l_theta, l_eta)
/// and returns g(y). Known noise gives only the theta part.
inline ScoreFn raw_scores(const ConvolvedModel& model, const Vector& theta, const Vector& eta) {
  auto bound = std::make_shared<const ConvolvedModel::Bound>(model.bind(theta, eta));
  const bool want_eta = model.noise().parametric();
  return [bound, want_eta](double y, std::span<double> out) {
    const ConvolutionValue v = bound->evaluate(y, true, want_eta);
    const auto k = static_cast<std::size_t>(bound->k());
    const auto m = want_eta ? static_cast<std::size_t>(bound->m()) : 0;
    if (!v.positive) {
      std::fill_n(out.begin(), k + m, 0.0);
      return 0.0;
    }
    for (std::size_t j = 0; j < k; ++j) out[j] = v.d_theta[static_cast<Eigen::Index>(j)] / v.density;
    for (std::size_t j = 0; j < m; ++j) out[k + j] = v.d_eta[static_cast<Eigen::Index>(j)] / v.density;
    return v.density;
  };
}

/// Simple-case efficient score system at theta0 (known noise).
inline ScoreSystem build_simple_scores(const ConvolvedModel& model, const Vector& theta0,
                                       const ScoreOptions& opt = {}) {
  if (model.noise().parametric()) {
    throw Error(ErrorCode::Config,
                "simple scores need a known noise density; use build_efficient_scores");
  }
  const SignalFamily& sig = model.signal();
  const int k = sig.dim;
  auto bound = std::make_shared<const ConvolvedModel::Bound>(model.bind(theta0));

  ScorePath path = opt.path;
  if (path == ScorePath::automatic) path = sig.exponential ? ScorePath::exponential : ScorePath::generic;
  if (path == ScorePath::exponential && !sig.exponential) {
    throw Error(ErrorCode::Config, "exponential score path needs an exponential signal family");
  }

  ScoreFn fn;
  std::string description;
  if (path == ScorePath::generic) {
    fn = raw_scores(model, theta0, Vector(0));
    description = "simple efficient score (generic) for " + sig.name + " with " + model.noise().name;
  } else {
    auto top = sig.exponential;
    const Vector eu = top->tilt(detail::padded(theta0, top->dim())).mean_basis.head(k);
    const int d = top->dim();
    fn = [bound, top, eu, k, d](double y, std::span<double> out) {
      const auto kk = static_cast<std::size_t>(k);
      std::fill_n(out.begin(), kk, 0.0);
      if (!bound->observable().contains(y)) return 0.0;
      const Interval range = bound->s_range(y);
      if (range.empty()) return 0.0;
      const PointEval& f = bound->signal_eval();
      const PointEval& h = bound->noise_eval();
      auto integrand = [&](double s, std::span<double> v) {
        const double w = f(s, {}) * h(y - s, {});
        v[0] = w;
        if (w == 0.0) {
          std::fill(v.begin() + 1, v.end(), 0.0);
          return;
        }
        std::array<double, ExponentialFamily::kMaxBasis> u{};
        top->basis(s, std::span<double>(u.data(), static_cast<std::size_t>(d)));
        for (std::size_t j = 0; j < kk; ++j) v[1 + j] = u[j] * w;
      };
      QuadratureSpec s = bound->spec();
      s.abs_tol = bound->density_floor();
      const auto r = integrate_vector(integrand, 1 + kk, range, s, 2);
      if (!(r[0] > bound->density_floor())) return 0.0;
      for (std::size_t j = 0; j < kk; ++j) out[j] = r[1 + j] / r[0] - eu[static_cast<Eigen::Index>(j)];
      return r[0];
    };
    description = "simple efficient score (exponential) for " + sig.name + " with " + model.noise().name;
  }

  const auto [mean, info] =
      detail::score_moments(fn, k, bound->observable(), expectation_spec(model.spec(), opt));
  return ScoreSystem(k, std::move(fn), info, mean, bound->observable(), std::nullopt, description);
}

inline ScoreSystem build_simple_scores(const ConvolvedModel& model, const ScoreOptions& opt = {}) {
  return build_simple_scores(model, model.signal().theta_null, opt);
}

namespace detail {

struct RawMoments {
  Vector mean;  // (E l_theta, E l_eta)
  Matrix second;
  std::shared_ptr<const ConvolvedModel::Bound> bound;
  ScoreFn fn;
};

inline RawMoments raw_moments(const ConvolvedModel& model, const Vector& theta0, const Vector& eta0,
                              const ScoreOptions& opt) {
  if (!model.noise().parametric()) {
    throw Error(ErrorCode::NotParametricNoise, "information blocks need a parametric noise model");
  }
  RawMoments rm;
  rm.bound = std::make_shared<const ConvolvedModel::Bound>(model.bind(theta0, eta0));
  rm.fn = raw_scores(model, theta0, eta0);
  const int dim = model.signal().dim + model.noise().dim;
  std::tie(rm.mean, rm.second) =
      score_moments(rm.fn, dim, rm.bound->observable(), expectation_spec(model.spec(), opt));
  return rm;
}

inline InformationBlocks split_blocks(const Matrix& full, int k) {
  const auto m = full.rows() - k;
  InformationBlocks b;
  b.i11 = full.topLeftCorner(k, k);
  b.i12 = full.topRightCorner(k, m);
  b.i21 = b.i12.transpose();
  b.i22 = full.bottomRightCorner(m, m);
  return b;
}

}  // namespace detail

/// Blocks of the full information matrix I(theta0, eta0) by quadrature against g.
inline InformationBlocks information_blocks(const ConvolvedModel& model, const Vector& theta0,
                                            const Vector& eta0, const ScoreOptions& opt = {}) {
  const detail::RawMoments rm = detail::raw_moments(model, theta0, eta0, opt);
  return detail::split_blocks(symmetrize(rm.second), model.signal().dim);
}

/// Composite-case efficient score l* = l_a - I_ab I_bb^-1 l_b for the chosen
/// parameter of interest a, with I* = I_aa - I_ab I_bb^-1 I_ba and L = I*^-1.
inline ScoreSystem build_efficient_scores(const ConvolvedModel& model, const Vector& theta0,
                                          const Vector& eta0, const ScoreOptions& opt = {},
                                          Interest interest = Interest::signal) {
  const detail::RawMoments rm = detail::raw_moments(model, theta0, eta0, opt);
  const int k = model.signal().dim;
  const int m = model.noise().dim;
  const InformationBlocks blocks = detail::split_blocks(symmetrize(rm.second), k);

  const bool sig = interest == Interest::signal;
  const int a_off = sig ? 0 : k, a_dim = sig ? k : m;
  const int b_off = sig ? k : 0, b_dim = sig ? m : k;
  const Matrix& i_aa = sig ? blocks.i11 : blocks.i22;
  const Matrix& i_ab = sig ? blocks.i12 : blocks.i21;
  const Matrix& i_bb = sig ? blocks.i22 : blocks.i11;
  const Matrix proj = i_ab * spd_inverse(i_bb, sig ? "I22 (nuisance information)" : "I11");
  const Matrix istar = symmetrize(i_aa - proj * i_ab.transpose());
  const Vector mean = rm.mean.segment(a_off, a_dim) - proj * rm.mean.segment(b_off, b_dim);

  const ScoreFn raw = rm.fn;
  const auto total = static_cast<std::size_t>(k + m);
  ScoreFn fn = [raw, proj, total, a_off, a_dim, b_off, b_dim](double y, std::span<double> out) {
    std::array<double, 2 * ExponentialFamily::kMaxBasis> r{};
    const double g = raw(y, std::span<double>(r.data(), total));
    for (int i = 0; i < a_dim; ++i) {
      double v = r[static_cast<std::size_t>(a_off + i)];
      for (int j = 0; j < b_dim; ++j) v -= proj(i, j) * r[static_cast<std::size_t>(b_off + j)];
      out[static_cast<std::size_t>(i)] = v;
    }
    return g;
  };
  std::string description = std::string("efficient score for ") + (sig ? "theta" : "eta") + " in " +
                            model.signal().name + " with " + model.noise().name;
  return ScoreSystem(a_dim, std::move(fn), istar, mean, rm.bound->observable(), blocks,
                     std::move(description));
}

// ---------------------------------------------------------------------------
// Tabulated evaluation

/// Barycentric Chebyshev interpolant of l* on an interval, grown by doubling
/// the (nested) second-kind grid until the previous interpolant reproduces
/// the new nodes to tol * max(1, max |l*|).
class ScoreTable {
 public:
  static std::optional<ScoreTable> build(const ScoreSystem& sys, Interval range, double tol = 1e-9,
                                         int max_intervals = 1024) {
    if (range.empty() || !range.finite()) return std::nullopt;
    ScoreTable t;
    t.range_ = range;
    t.k_ = sys.k();
    int n = 16;
    t.sample(sys, n, nullptr);
    while (2 * n <= max_intervals) {
      ScoreTable next;
      next.range_ = range;
      next.k_ = t.k_;
      next.sample(sys, 2 * n, &t);
      double err = 0.0, scale = 1.0;
      std::array<double, ExponentialFamily::kMaxBasis> approx{};
      for (int j = 1; j <= 2 * n; j += 2) {
        t.eval(next.nodes_[static_cast<std::size_t>(j)], std::span<double>(approx.data(), static_cast<std::size_t>(t.k_)));
        for (int c = 0; c < t.k_; ++c) {
          const double exact = next.values_(j, c);
          err = std::max(err, std::abs(approx[static_cast<std::size_t>(c)] - exact));
        }
      }
      scale = std::max(scale, next.values_.cwiseAbs().maxCoeff());
      t = std::move(next);
      n *= 2;
      if (err <= tol * scale) return t;
    }
    return std::nullopt;
  }

  Interval range() const noexcept { return range_; }
  int size() const noexcept { return static_cast<int>(nodes_.size()); }

  void eval(double y, std::span<double> out) const {
    double den = 0.0;
    std::fill_n(out.begin(), k_, 0.0);
    for (std::size_t j = 0; j < nodes_.size(); ++j) {
      const double diff = y - nodes_[j];
      if (diff == 0.0) {
        for (int c = 0; c < k_; ++c) out[static_cast<std::size_t>(c)] = values_(static_cast<Eigen::Index>(j), c);
        return;
      }
      const double w = weights_[j] / diff;
      den += w;
      for (int c = 0; c < k_; ++c) out[static_cast<std::size_t>(c)] += w * values_(static_cast<Eigen::Index>(j), c);
    }
    for (int c = 0; c < k_; ++c) out[static_cast<std::size_t>(c)] /= den;
  }

 private:
  // Samples on the n-interval grid, reusing the even nodes from `coarse`.
  void sample(const ScoreSystem& sys, int n, const ScoreTable* coarse) {
    nodes_.resize(static_cast<std::size_t>(n) + 1);
    weights_.resize(nodes_.size());
    values_.resize(n + 1, k_);
    const double mid = range_.mid(), half = 0.5 * range_.width();
    std::array<double, ExponentialFamily::kMaxBasis> s{};
    for (int j = 0; j <= n; ++j) {
      nodes_[static_cast<std::size_t>(j)] = mid + half * std::cos(std::numbers::pi * j / n);
      weights_[static_cast<std::size_t>(j)] = ((j % 2) ? -1.0 : 1.0) * ((j == 0 || j == n) ? 0.5 : 1.0);
      if (coarse && j % 2 == 0) {
        values_.row(j) = coarse->values_.row(j / 2);
        continue;
      }
      sys.score(nodes_[static_cast<std::size_t>(j)], std::span<double>(s.data(), static_cast<std::size_t>(k_)));
      for (int c = 0; c < k_; ++c) values_(j, c) = s[static_cast<std::size_t>(c)];
    }
    nodes_.front() = range_.hi;
    nodes_.back() = range_.lo;
  }

  Interval range_;
  int k_ = 0;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  Matrix values_;
};

struct EvaluationOptions {
  unsigned workers = 1;
  /// Interpolate l* on [min y, max y] when n is at least `table_min_n` and
  /// the table verifies; otherwise evaluate every point directly.
  bool tabulate = true;
  double table_tol = 1e-9;
  std::size_t table_min_n = 256;
};

inline Matrix evaluate_scores(const ScoreSystem& sys, std::span<const double> ys,
                              const EvaluationOptions& opt = {}) {
  if (!opt.tabulate || ys.size() < opt.table_min_n) return sys.evaluate(ys, opt.workers);
  const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
  const Interval range = intersect({*lo, *hi}, sys.window());
  const auto table = ScoreTable::build(sys, range, opt.table_tol);
  if (!table) return sys.evaluate(ys, opt.workers);
  Matrix out(static_cast<Eigen::Index>(ys.size()), sys.k());
  std::array<double, ExponentialFamily::kMaxBasis> s{};
  const auto k = static_cast<std::size_t>(sys.k());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (range.contains(ys[i])) {
      table->eval(ys[i], std::span<double>(s.data(), k));
    } else {
      sys.score(ys[i], std::span<double>(s.data(), k));
    }
    for (std::size_t c = 0; c < k; ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = s[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimated (plug-in) scores

struct EstimatedScores {
  Matrix values;           // n x k, row j is l*_j
  Matrix L_hat;            // k x k
  Matrix information_hat;  // k x k, L_hat^-1
  Vector nuisance_hat;     // estimated eta (empty when none)
  std::string provenance;

  int k() const noexcept { return static_cast<int>(values.cols()); }
  Eigen::Index n() const noexcept { return values.rows(); }

  /// Normalizing matrix for the leading j components.
  Matrix leading_L(int j) const {
    if (j == k()) return L_hat;
    return spd_inverse(information_hat.topLeftCorner(j, j), "leading information block");
  }
};

inline double sample_mean(std::span<const double> y) {
  if (y.empty()) throw Error(ErrorCode::DegenerateSample, "empty sample");
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

/// Sample variance with divisor n - 1.
inline double sample_variance(std::span<const double> y) {
  if (y.size() < 2) throw Error(ErrorCode::DegenerateSample, "sample variance needs n >= 2");
  const double mu = sample_mean(y);
  double ss = 0.0;
  for (double v : y) ss += (v - mu) * (v - mu);
  return ss / static_cast<double>(y.size() - 1);
}

/// Scores from a fully specified system (no estimation).
inline EstimatedScores exact_scores(const ScoreSystem& sys, std::span<const double> y,
                                    const EvaluationOptions& eval = {}) {
  EstimatedScores e;
  e.values = evaluate_scores(sys, y, eval);
  e.L_hat = sys.L();
  e.information_hat = sys.information();
  e.provenance = sys.description();
  return e;
}

/// N(theta,1) signal in N(0, eta^2) noise: l*_j = (Y_j - theta0) / s^2, L_hat = s^2.
inline EstimatedScores plugin_scores_example2(std::span<const double> y, double theta0) {
  const double s2 = sample_variance(y);
  if (!(s2 > 0.0)) throw Error(ErrorCode::DegenerateSample, "sample variance is zero");
  EstimatedScores e;
  e.values.resize(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t j = 0; j < y.size(); ++j) e.values(static_cast<Eigen::Index>(j), 0) = (y[j] - theta0) / s2;
  e.L_hat = Matrix::Constant(1, 1, s2);
  e.information_hat = Matrix::Constant(1, 1, 1.0 / s2);
  e.nuisance_hat = Vector::Constant(1, std::sqrt(std::max(s2 - 1.0, 0.0)));
  e.provenance = "sample variance (divisor n-1) for eta^2 + 1";
  return e;
}

struct Example3Constants {
  double c1, c2, c;
};

inline Example3Constants example3_constants(double eta0) {
  const double v = eta0 * eta0 + 1.0;
  return {eta0 / (v * v), eta0 / v, 2.0 * eta0 * eta0 / (v * v)};
}

/// eta as the parameter of interest: l*_j = C1 (Y_j - theta_hat)^2 - C2, L_hat = 1 / C.
inline EstimatedScores plugin_scores_example3(std::span<const double> y, double eta0,
                                              std::optional<double> theta_hat = std::nullopt) {
  if (y.size() < 2) throw Error(ErrorCode::DegenerateSample, "example 3 scores need n >= 2");
  if (!(eta0 > 0.0)) throw Error(ErrorCode::OutOfDomain, "eta0 must be positive");
  const double th = theta_hat ? *theta_hat : sample_mean(y);
  if (!std::isfinite(th)) throw Error(ErrorCode::NonFinite, "theta estimate is not finite");
  const Example3Constants c = example3_constants(eta0);
  EstimatedScores e;
  e.values.resize(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t j = 0; j < y.size(); ++j) {
    const double r = y[j] - th;
    e.values(static_cast<Eigen::Index>(j), 0) = c.c1 * r * r - c.c2;
  }
  e.L_hat = Matrix::Constant(1, 1, 1.0 / c.c);
  e.information_hat = Matrix::Constant(1, 1, c.c);
  e.nuisance_hat = Vector::Constant(1, th);
  e.provenance = theta_hat ? "user-supplied theta" : "sample mean for theta";
  return e;
}

/// Mean and variance of the signal density f_theta by quadrature.
inline std::pair<double, double> signal_moments(const SignalFamily& fam, const Vector& theta,
                                                const QuadratureSpec& spec = {}) {
  const PointEval f = fam.bind(theta);
  const Interval w = fam.support(theta, spec.truncation_mass * spec.truncation_mass);
  auto integrand = [&](double x, std::span<double> v) {
    const double p = f(x, {});
    v[0] = p;
    v[1] = p * x;
    v[2] = p * x * x;
  };
  const auto r = integrate_vector(integrand, 3, w, spec, 8);
  const double mean = r[1] / r[0];
  return {mean, r[2] / r[0] - mean * mean};
}

struct PluginOptions {
  ScoreOptions scores;
  /// Lower clamp for the moment estimate of the noise variance.
  double min_noise_variance = 1e-4;
  EvaluationOptions evaluation;
  /// Var of f_theta0; computed by quadrature when empty.
  std::optional<double> signal_variance;
};

/// Composite plug-in: eta_hat inverts s^2 - Var_{f_theta0} X = noise variance,
/// then the efficient system is built at (theta0, eta_hat) and evaluated on y.
inline EstimatedScores plugin_efficient_scores(const ConvolvedModel& model, const Vector& theta0,
                                               std::span<const double> y,
                                               const PluginOptions& opt = {}) {
  const NoiseModel& noise = model.noise();
  if (!noise.parametric()) throw Error(ErrorCode::NotParametricNoise, "plug-in needs parametric noise");
  if (!noise.eta_from_variance) {
    throw Error(ErrorCode::Config, noise.name + " has no variance-to-parameter map for the plug-in");
  }
  const double s2 = sample_variance(y);
  if (!(s2 > 0.0)) throw Error(ErrorCode::DegenerateSample, "sample variance is zero");
  const double fvar =
      opt.signal_variance ? *opt.signal_variance : signal_moments(model.signal(), theta0, model.spec()).second;
  const double v = std::max(s2 - fvar, opt.min_noise_variance);
  const Vector eta_hat = noise.eta_from_variance(v);
  const ScoreSystem sys = build_efficient_scores(model, theta0, eta_hat, opt.scores);
  EstimatedScores e = exact_scores(sys, y, opt.evaluation);
  e.nuisance_hat = eta_hat;
  e.provenance = "moment plug-in: noise variance = max(s^2 - Var f_theta0, " +
                 std::to_string(opt.min_noise_variance) + ")";
  return e;
}

}  // namespace dscore
