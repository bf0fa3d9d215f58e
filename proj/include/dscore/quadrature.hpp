#pragma once

// Adaptive Gauss-Kronrod (G10/K21) integration over finite windows, plus the
// support-truncation search used to turn infinite supports into finite ones.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "dscore/error.hpp"

namespace dscore {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const noexcept { return hi - lo; }
  double mid() const noexcept { return 0.5 * (lo + hi); }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
  bool empty() const noexcept { return !(hi > lo); }
  bool finite() const noexcept { return std::isfinite(lo) && std::isfinite(hi); }
};

inline Interval intersect(Interval a, Interval b) noexcept {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

/// Tolerances shared by every integral in the library.
struct QuadratureSpec {
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  int max_subdivisions = 200;
  /// Probability mass allowed outside a truncated window, per tail.
  double truncation_mass = 1e-12;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol >= 0.0) || max_subdivisions < 1 ||
        !(truncation_mass > 0.0 && truncation_mass < 1e-6)) {
      throw Error(ErrorCode::Config, "invalid QuadratureSpec");
    }
  }
};

namespace detail {

// Kronrod abscissae on [0,1]; odd indices are shared with the 10-point Gauss rule.
inline constexpr std::array<double, 11> kKronrodNodes = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};

inline constexpr std::array<double, 11> kKronrodWeights = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600525007060, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};

inline constexpr std::array<double, 5> kGaussWeights = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

inline constexpr std::size_t kNodeCount = 21;

struct Panel {
  double lo;
  double hi;
  double error;
  std::size_t offset;  // into the shared value buffer
};

inline bool worse(const Panel& a, const Panel& b) noexcept { return a.error < b.error; }

/// Evaluates one 21-point panel for a vector integrand. `fx` is scratch of
/// size 21*dim; results land in `value` (dim). Returns the panel error
/// (max over components) using the QUADPACK error heuristic.
template <class F>
double gauss_kronrod_panel(F& f, double lo, double hi, std::size_t dim, std::span<double> fx,
                           std::span<double> value) {
  const double center = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);

  // Node order in fx: 0 = center, then pairs (center - h*x_i, center + h*x_i) for i = 0..9.
  auto row = [&](std::size_t r) { return fx.subspan(r * dim, dim); };
  auto check = [&](std::span<const double> out, double x) {
    for (double v : out) {
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "integrand returned a non-finite value at x = " << x;
        throw Error(ErrorCode::NonFinite, msg.str());
      }
    }
  };
  f(center, row(0));
  check(row(0), center);
  for (std::size_t i = 0; i < 10; ++i) {
    const double dx = half * kKronrodNodes[i];
    f(center - dx, row(1 + 2 * i));
    check(row(1 + 2 * i), center - dx);
    f(center + dx, row(2 + 2 * i));
    check(row(2 + 2 * i), center + dx);
  }

  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr double tiny = std::numeric_limits<double>::min();
  double panel_error = 0.0;
  for (std::size_t c = 0; c < dim; ++c) {
    const double fc = fx[c];
    double kronrod = kKronrodWeights[10] * fc;
    double gauss = 0.0;
    double resabs = kKronrodWeights[10] * std::abs(fc);
    for (std::size_t i = 0; i < 10; ++i) {
      const double a = fx[(1 + 2 * i) * dim + c];
      const double b = fx[(2 + 2 * i) * dim + c];
      kronrod += kKronrodWeights[i] * (a + b);
      resabs += kKronrodWeights[i] * (std::abs(a) + std::abs(b));
      if (i % 2 == 1) gauss += kGaussWeights[i / 2] * (a + b);
    }
    const double mean = 0.5 * kronrod;
    double resasc = kKronrodWeights[10] * std::abs(fc - mean);
    for (std::size_t i = 0; i < 10; ++i) {
      resasc += kKronrodWeights[i] * (std::abs(fx[(1 + 2 * i) * dim + c] - mean) +
                                      std::abs(fx[(2 + 2 * i) * dim + c] - mean));
    }
    const double result = kronrod * half;
    resabs *= std::abs(half);
    resasc *= std::abs(half);
    double err = std::abs((kronrod - gauss) * half);
    if (resasc != 0.0 && err != 0.0) {
      err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
    }
    if (resabs > tiny / (50.0 * eps)) err = std::max(50.0 * eps * resabs, err);
    value[c] = result;
    panel_error = std::max(panel_error, err);
  }
  return panel_error;
}

}  // namespace detail

/// Adaptive integration of a vector-valued integrand `f(x, out)` writing `dim`
/// components into `out`. The global error (max norm over components) is
/// driven below max(abs_tol, rel_tol * max_c |I_c|).
template <class F>
std::vector<double> integrate_vector(F&& f, std::size_t dim, Interval window,
                                     const QuadratureSpec& spec, std::size_t initial_panels = 1) {
  std::vector<double> total(dim, 0.0);
  if (dim == 0 || window.empty()) return total;
  if (!window.finite()) throw Error(ErrorCode::NonFinite, "integration window is not finite");
  initial_panels = std::max<std::size_t>(1, initial_panels);

  const std::size_t capacity = initial_panels + 2 * static_cast<std::size_t>(spec.max_subdivisions);
  std::vector<double> values(capacity * dim);
  std::vector<double> fx(detail::kNodeCount * dim);
  std::vector<detail::Panel> heap;
  heap.reserve(capacity);
  std::size_t used = 0;

  auto add_panel = [&](double lo, double hi) {
    const std::size_t offset = used * dim;
    ++used;
    const double err = detail::gauss_kronrod_panel(
        f, lo, hi, dim, std::span<double>(fx), std::span<double>(values).subspan(offset, dim));
    heap.push_back({lo, hi, err, offset});
    std::push_heap(heap.begin(), heap.end(), detail::worse);
  };

  const double step = window.width() / static_cast<double>(initial_panels);
  for (std::size_t i = 0; i < initial_panels; ++i) {
    const double lo = window.lo + step * static_cast<double>(i);
    const double hi = (i + 1 == initial_panels) ? window.hi : lo + step;
    add_panel(lo, hi);
  }

  auto summarize = [&](double& err_sum) {
    std::fill(total.begin(), total.end(), 0.0);
    err_sum = 0.0;
    for (const auto& p : heap) {
      err_sum += p.error;
      for (std::size_t c = 0; c < dim; ++c) total[c] += values[p.offset + c];
    }
    double scale = 0.0;
    for (double v : total) scale = std::max(scale, std::abs(v));
    return std::max(spec.abs_tol, spec.rel_tol * scale);
  };

  int subdivisions = 0;
  double err_sum = 0.0;
  double tol = summarize(err_sum);
  while (err_sum > tol) {
    if (subdivisions >= spec.max_subdivisions) {
      std::ostringstream msg;
      msg << "max_subdivisions (" << spec.max_subdivisions << ") exhausted on [" << window.lo
          << ", " << window.hi << "], error estimate " << err_sum << " > " << tol;
      throw Error(ErrorCode::Budget, msg.str());
    }
    std::pop_heap(heap.begin(), heap.end(), detail::worse);
    const detail::Panel worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.lo + worst.hi);
    if (!(mid > worst.lo && mid < worst.hi)) {
      throw Error(ErrorCode::Budget, "panel width reached floating-point resolution");
    }
    add_panel(worst.lo, mid);
    add_panel(mid, worst.hi);
    ++subdivisions;
    tol = summarize(err_sum);
  }
  return total;
}

/// Scalar convenience wrapper around integrate_vector.
template <class F>
double integrate(F&& f, Interval window, const QuadratureSpec& spec) {
  auto wrapped = [&f](double x, std::span<double> out) { out[0] = f(x); };
  return integrate_vector(wrapped, 1, window, spec)[0];
}

namespace detail {

// Integrates over [a, b] in consecutive pieces no wider than `panel_width`,
// so a narrow bump inside a wide range is never stepped over.
template <class F>
double integrate_pieces(F& f, double a, double b, double panel_width, const QuadratureSpec& spec) {
  if (!(b > a)) return 0.0;
  constexpr std::size_t kMaxPieces = 4096;
  const auto pieces = static_cast<std::size_t>(
      std::clamp(std::ceil((b - a) / panel_width), 1.0, static_cast<double>(kMaxPieces)));
  const double step = (b - a) / static_cast<double>(pieces);
  double sum = 0.0;
  for (std::size_t i = 0; i < pieces; ++i) {
    const double lo = a + step * static_cast<double>(i);
    const double hi = (i + 1 == pieces) ? b : lo + step;
    sum += integrate(f, Interval{lo, hi}, spec);
  }
  return sum;
}

}  // namespace detail

/// Finds a finite window leaving at most `truncation_mass` (relative to the
/// mass captured) outside each end of a nonnegative density. Outward
/// geometric expansion from `hint` locates the mass; bisection then pulls
/// each end in as far as the tail budget allows.
template <class F>
Interval truncate_support(F&& density, Interval hint, const QuadratureSpec& spec) {
  if (!hint.finite() || hint.empty()) {
    throw Error(ErrorCode::Config, "truncate_support needs a finite hint with lo < hi");
  }
  QuadratureSpec inner = spec;
  inner.abs_tol = 0.0;
  inner.max_subdivisions = std::max(spec.max_subdivisions, 200);
  const double tau = spec.truncation_mass;
  const double base = hint.width();

  double left = hint.lo;
  double right = hint.hi;
  double mass = detail::integrate_pieces(density, left, right, base, inner);
  double step = base;
  double left_tail = 0.0;
  double right_tail = 0.0;
  bool left_done = false;
  bool right_done = false;

  constexpr int kMaxExpansions = 64;
  for (int iter = 0; iter < kMaxExpansions && !(left_done && right_done); ++iter) {
    const double shell_l =
        left_done ? left_tail : detail::integrate_pieces(density, left - step, left, base, inner);
    const double shell_r =
        right_done ? right_tail : detail::integrate_pieces(density, right, right + step, base, inner);
    const double captured = mass + (left_done ? 0.0 : shell_l) + (right_done ? 0.0 : shell_r);
    if (!left_done) {
      if (captured > 0.0 && shell_l <= tau * captured) {
        left_done = true;
        left_tail = shell_l;
      } else {
        left -= step;
        mass += shell_l;
      }
    }
    if (!right_done) {
      if (captured > 0.0 && shell_r <= tau * captured) {
        right_done = true;
        right_tail = shell_r;
      } else {
        right += step;
        mass += shell_r;
      }
    }
    step *= 2.0;
    if (!std::isfinite(left) || !std::isfinite(right)) break;
  }
  if (!(left_done && right_done) || !(mass > 0.0)) {
    throw Error(ErrorCode::Budget, "truncate_support: no window found within the expansion limit");
  }

  const double budget = tau * mass;
  const double resolution = 1e-8 * base;

  // Pull the left end inward: largest c with tail(c) <= budget.
  double a = left;
  double tail_a = left_tail;
  double b = right;
  while (b - a > resolution) {
    const double m = 0.5 * (a + b);
    const double tail_m = tail_a + detail::integrate_pieces(density, a, m, base, inner);
    if (tail_m <= budget) {
      a = m;
      tail_a = tail_m;
    } else {
      b = m;
    }
  }
  const double lo = a;

  // Mirror image for the right end.
  double d = right;
  double tail_d = right_tail;
  double c = lo;
  while (d - c > resolution) {
    const double m = 0.5 * (c + d);
    const double tail_m = tail_d + detail::integrate_pieces(density, m, d, base, inner);
    if (tail_m <= budget) {
      d = m;
      tail_d = tail_m;
    } else {
      c = m;
    }
  }
  return {lo, d};
}

}  // namespace dscore
