#pragma once

// Quadratic score statistics, the chi-square reference distribution and decisions.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dscore/error.hpp"
#include "dscore/families.hpp"

namespace dscore {

enum class StatKind { U, W };

inline const char* to_string(StatKind k) { return k == StatKind::U ? "U" : "W"; }

struct StatisticValue {
  double value = 0.0;
  int k = 0;
  StatKind kind = StatKind::U;
};

/// m L m' with m = (1/sqrt n) * column sums of `scores` (n x k).
inline StatisticValue quadratic_statistic(const Matrix& scores, const Matrix& L,
                                          StatKind kind = StatKind::U) {
  if (scores.rows() < 1) throw Error(ErrorCode::DimensionMismatch, "statistic needs n >= 1 rows");
  if (L.rows() != L.cols() || L.rows() != scores.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "score columns and L dimension differ");
  }
  const Vector m = scores.colwise().sum().transpose() / std::sqrt(static_cast<double>(scores.rows()));
  const double v = m.dot(L * m);
  if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "statistic is not finite");
  return {std::max(v, 0.0), static_cast<int>(scores.cols()), kind};
}

// ---------------------------------------------------------------------------
// Regularized incomplete gamma and the chi-square distribution

namespace detail {

// P(a, x) by its power series; accurate for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a, sum = term;
  for (int i = 1; i < 10000; ++i) {
    term *= x / (a + i);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the modified Lentz continued fraction; accurate for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

inline void check_chi2_args(int k, double x) {
  if (k < 1) throw Error(ErrorCode::OutOfDomain, "chi-square degrees of freedom must be >= 1");
  if (!(x >= 0.0)) throw Error(ErrorCode::OutOfDomain, "chi-square argument must be >= 0");
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw Error(ErrorCode::OutOfDomain, "gamma_p needs a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return x < a + 1.0 ? detail::gamma_p_series(a, x) : 1.0 - detail::gamma_q_fraction(a, x);
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), without cancellation.
inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw Error(ErrorCode::OutOfDomain, "gamma_q needs a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return x < a + 1.0 ? 1.0 - detail::gamma_p_series(a, x) : detail::gamma_q_fraction(a, x);
}

inline double chi2_cdf(int k, double x) {
  detail::check_chi2_args(k, x);
  return gamma_p(0.5 * k, 0.5 * x);
}

/// Upper tail 1 - chi2_cdf(k, x).
inline double chi2_sf(int k, double x) {
  detail::check_chi2_args(k, x);
  return gamma_q(0.5 * k, 0.5 * x);
}

inline double chi2_pdf(int k, double x) {
  detail::check_chi2_args(k, x);
  if (x == 0.0) return k == 2 ? 0.5 : (k == 1 ? std::numeric_limits<double>::infinity() : 0.0);
  const double a = 0.5 * k;
  return std::exp((a - 1.0) * std::log(x) - 0.5 * x - a * std::log(2.0) - std::lgamma(a));
}

/// Quantile by bracketing and safeguarded Newton steps.
inline double chi2_quantile(int k, double p) {
  if (k < 1) throw Error(ErrorCode::OutOfDomain, "chi-square degrees of freedom must be >= 1");
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::OutOfDomain, "quantile needs 0 <= p < 1");
  if (p == 0.0) return 0.0;
  double lo = 0.0, hi = std::max(1.0, static_cast<double>(k));
  while (chi2_cdf(k, hi) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw Error(ErrorCode::OutOfDomain, "quantile bracket overflow");
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 500; ++it) {
    const double f = chi2_cdf(k, x) - p;
    if (f == 0.0) return x;
    if (f < 0.0) lo = x; else hi = x;
    const double dens = chi2_pdf(k, x);
    double next = (dens > 0.0 && std::isfinite(dens)) ? x - f / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-14 * std::max(1.0, x) || hi - lo <= 1e-14 * std::max(1.0, x)) return next;
    x = next;
  }
  return x;
}

struct Decision {
  double p_value = 1.0;
  bool reject = false;
};

/// p = 1 - chi2_cdf(df, stat); reject iff p < alpha.
inline Decision decide(double stat, int df, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::OutOfDomain, "alpha must lie in [0, 1]");
  if (!std::isfinite(stat)) throw Error(ErrorCode::NonFinite, "statistic is not finite");
  const double p = chi2_sf(df, std::max(stat, 0.0));
  return {p, p < alpha};
}

struct TestReport {
  StatKind kind = StatKind::U;
  std::vector<double> statistics;  // U_1..U_d or W_1..W_d
  int selected_S = 1;
  /// Degrees of freedom of the reference law: 1 for data-driven statistics.
  int reference_df = 1;
  double stat_at_S = 0.0;
  double p_value = 1.0;  // against chi2_1
  double alpha = 0.05;
  bool reject = false;
  /// Non-asymptotic heuristic: p against chi2_S instead of chi2_1.
  double p_value_df_at_S = 1.0;
  std::string penalty;
  long long n = 0;
  std::string provenance;
  std::vector<std::string> warnings;
};

}  // namespace dscore
