#pragma once

#include <cmath>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace dscore::normal {

inline double pdf(double x, double mean = 0.0, double sd = 1.0) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

inline double cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2));
}

/// Upper-tail point: P(Z > z) = tail_mass for the standard normal.
inline double upper_tail_point(double tail_mass) {
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * tail_mass);
}

}  // namespace dscore::normal
