#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <span>

#include <boost/math/distributions/normal.hpp>

#include "dscore/normal.hpp"
#include "dscore/quadrature.hpp"

using namespace dscore;

namespace {

double phi(double x) { return normal::pdf(x); }

}  // namespace

TEST(Integrate, StandardNormalMassMatchesErf) {
  const double value = integrate(phi, {-8.0, 8.0}, QuadratureSpec{});
  const double oracle = std::erf(8.0 / std::sqrt(2.0));
  EXPECT_NEAR(value, oracle, 1e-10);
  EXPECT_NEAR(value, 1.0, 1e-10);
}

TEST(Integrate, ZeroIntegrandIsExactlyZero) {
  EXPECT_EQ(integrate([](double) { return 0.0; }, {-3.0, 11.0}, QuadratureSpec{}), 0.0);
}

TEST(Integrate, OddIntegrandVanishes) {
  const double value = integrate([](double x) { return x * phi(x); }, {-8.0, 8.0}, QuadratureSpec{});
  EXPECT_NEAR(value, 0.0, 1e-12);
}

TEST(Integrate, HighDegreePolynomial) {
  const double value = integrate([](double x) { return std::pow(x, 20); }, {0.0, 1.0}, QuadratureSpec{});
  EXPECT_NEAR(value, 1.0 / 21.0, 1e-14);
}

TEST(Integrate, KinkedIntegrandConverges) {
  // |x - 0.3| has a kink that forces subdivision.
  const double value =
      integrate([](double x) { return std::abs(x - 0.3); }, {0.0, 1.0}, QuadratureSpec{});
  EXPECT_NEAR(value, 0.5 * (0.09 + 0.49), 1e-10);
}

TEST(Integrate, NonFiniteIntegrandIsReported) {
  try {
    integrate([](double x) { return 1.0 / x; }, {-1.0, 1.0}, QuadratureSpec{});
    FAIL() << "expected NonFinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(Integrate, ExhaustedBudgetIsReported) {
  QuadratureSpec spec;
  spec.max_subdivisions = 2;
  spec.rel_tol = 1e-14;
  try {
    integrate([](double x) { return 1.0 / std::sqrt(std::abs(x - 0.3) + 1e-12); }, {0.0, 1.0}, spec);
    FAIL() << "expected Budget";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Budget);
  }
}

TEST(Integrate, VectorMatchesScalarComponents) {
  auto f = [](double x, std::span<double> out) {
    out[0] = phi(x);
    out[1] = x * x * phi(x);
    out[2] = std::cos(x) * phi(x);
  };
  const auto v = integrate_vector(f, 3, {-9.0, 9.0}, QuadratureSpec{});
  EXPECT_NEAR(v[0], 1.0, 1e-10);
  EXPECT_NEAR(v[1], 1.0, 1e-10);
  EXPECT_NEAR(v[2], std::exp(-0.5), 1e-10);  // characteristic function at t = 1
}

TEST(Integrate, LinearityOnPolynomialTimesGaussian) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  const QuadratureSpec spec;
  for (int trial = 0; trial < 25; ++trial) {
    const double p0 = coef(rng), p1 = coef(rng), p2 = coef(rng), p3 = coef(rng);
    const double q0 = coef(rng), q1 = coef(rng), q2 = coef(rng);
    const double a = coef(rng), b = coef(rng);
    auto f = [&](double x) { return (p0 + p1 * x + p2 * x * x + p3 * x * x * x) * phi(x); };
    auto g = [&](double x) { return (q0 + q1 * x + q2 * x * x) * phi(x - 0.5); };
    const Interval w{-10.0, 10.0};
    const double lhs = integrate([&](double x) { return a * f(x) + b * g(x); }, w, spec);
    const double rhs = a * integrate(f, w, spec) + b * integrate(g, w, spec);
    const double scale = std::abs(a) * 5.0 + std::abs(b) * 5.0;
    EXPECT_NEAR(lhs, rhs, 2.0 * spec.rel_tol * scale + 1e-14);
  }
}

TEST(Integrate, DeterministicBitForBit) {
  auto f = [](double x) { return std::exp(-x * x) * std::cos(3.0 * x) + std::abs(x); };
  const double a = integrate(f, {-2.0, 3.0}, QuadratureSpec{});
  const double b = integrate(f, {-2.0, 3.0}, QuadratureSpec{});
  EXPECT_EQ(std::memcmp(&a, &b, sizeof(double)), 0);
}

TEST(Integrate, NonnegativeIntegrandGivesNonnegativeResult) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> center(-3.0, 3.0);
  const QuadratureSpec spec;
  for (int i = 0; i < 20; ++i) {
    const double c = center(rng);
    auto f = [c](double x) { return std::exp(-40.0 * (x - c) * (x - c)); };
    EXPECT_GE(integrate(f, {-5.0, 5.0}, spec), -spec.abs_tol);
  }
}

TEST(TruncateSupport, StandardNormalWindowCoversQuantiles) {
  QuadratureSpec spec;
  spec.truncation_mass = 1e-12;
  const Interval w = truncate_support(phi, {-1.0, 1.0}, spec);
  const boost::math::normal n;
  const double z = -boost::math::quantile(n, 1e-12);  // 7.034...
  EXPECT_LE(w.lo, -7.03);
  EXPECT_GE(w.hi, 7.03);
  // The window is pulled in to the tail budget, not left at the expansion edge.
  EXPECT_GT(w.lo, -z - 0.05);
  EXPECT_LT(w.hi, z + 0.05);
  EXPECT_LE(boost::math::cdf(n, w.lo), 1e-12 * (1.0 + 1e-6));
}

TEST(TruncateSupport, CompactSupportNeedsNoExpansion) {
  auto uniform = [](double x) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; };
  const Interval w = truncate_support(uniform, {0.0, 1.0}, QuadratureSpec{});
  EXPECT_EQ(w.lo, 0.0);
  EXPECT_EQ(w.hi, 1.0);
}

TEST(TruncateSupport, FindsMassFarFromHint) {
  auto shifted = [](double x) { return normal::pdf(x, 100.0, 1.0); };
  const Interval w = truncate_support(shifted, {-1.0, 1.0}, QuadratureSpec{});
  EXPECT_LE(w.lo, 93.0);
  EXPECT_GE(w.hi, 107.0);
  EXPECT_GT(w.lo, 90.0);
  EXPECT_LT(w.hi, 110.0);
}

TEST(TruncateSupport, RejectsBadHint) {
  EXPECT_THROW(truncate_support(phi, {1.0, 1.0}, QuadratureSpec{}), Error);
}
