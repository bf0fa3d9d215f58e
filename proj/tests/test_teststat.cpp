#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "dscore/scores.hpp"
#include "dscore/selection.hpp"
#include "dscore/teststat.hpp"

using namespace dscore;

TEST(QuadraticStatistic, ZeroScoresGiveZero) {
  const Matrix s = Matrix::Zero(10, 3);
  EXPECT_EQ(quadratic_statistic(s, Matrix::Identity(3, 3)).value, 0.0);
}

TEST(QuadraticStatistic, ScalarExample) {
  Matrix s(4, 1);
  s << 1, 1, 1, 1;
  Matrix L(1, 1);
  L << 2.0;
  const StatisticValue v = quadratic_statistic(s, L);
  EXPECT_DOUBLE_EQ(v.value, 8.0);
  EXPECT_EQ(v.k, 1);
}

TEST(QuadraticStatistic, MatchesExplicitFormula) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const Matrix s = Matrix::NullaryExpr(50, 3, [&] { return nd(rng); });
  const Matrix g = Matrix::NullaryExpr(3, 3, [&] { return nd(rng); });
  const Matrix L = g * g.transpose() + Matrix::Identity(3, 3);
  double expect = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double sa = 0.0, sb = 0.0;
      for (int j = 0; j < 50; ++j) {
        sa += s(j, a);
        sb += s(j, b);
      }
      expect += sa * L(a, b) * sb / 50.0;
    }
  }
  EXPECT_NEAR(quadratic_statistic(s, L).value, expect, 1e-11 * expect);
}

TEST(QuadraticStatistic, DimensionChecks) {
  EXPECT_THROW(quadratic_statistic(Matrix::Zero(5, 2), Matrix::Identity(3, 3)), Error);
  EXPECT_THROW(quadratic_statistic(Matrix::Zero(0, 2), Matrix::Identity(2, 2)), Error);
}

TEST(ChiSquare, Examples) {
  EXPECT_EQ(chi2_cdf(3, 0.0), 0.0);
  EXPECT_NEAR(chi2_cdf(2, 2.0 * std::log(2.0)), 0.5, 1e-14);
  EXPECT_NEAR(chi2_quantile(1, 0.95), 3.84146, 1e-5);
  EXPECT_NEAR(chi2_sf(1, 8.0), 0.004677734981047266, 1e-13);
}

TEST(ChiSquare, AgreesWithBoostOnGrid) {
  for (int k = 1; k <= 30; ++k) {
    for (double x : {1e-6, 0.01, 0.3, 1.0, 2.5, 5.0, 10.0, 20.0, 45.0, 80.0}) {
      const double oracle = boost::math::gamma_p(0.5 * k, 0.5 * x);
      const double oq = boost::math::gamma_q(0.5 * k, 0.5 * x);
      EXPECT_NEAR(chi2_cdf(k, x), oracle, 1e-13) << k << " " << x;
      EXPECT_NEAR(chi2_sf(k, x), oq, 1e-13 + 1e-12 * oq) << k << " " << x;
    }
  }
}

TEST(ChiSquare, QuantileInvertsCdf) {
  for (int k = 1; k <= 10; ++k) {
    const boost::math::chi_squared_distribution<double> ref(k);
    for (int i = 1; i < 100; ++i) {
      const double p = i / 100.0;
      const double q = chi2_quantile(k, p);
      EXPECT_NEAR(chi2_cdf(k, q), p, 1e-9);
      EXPECT_NEAR(q, boost::math::quantile(ref, p), 1e-8 * std::max(1.0, q));
    }
  }
}

TEST(ChiSquare, DomainErrors) {
  EXPECT_THROW(chi2_cdf(0, 1.0), Error);
  EXPECT_THROW(chi2_cdf(1, -1.0), Error);
  EXPECT_THROW(chi2_quantile(2, 1.0), Error);
  EXPECT_THROW(chi2_quantile(2, -0.1), Error);
  EXPECT_EQ(chi2_quantile(2, 0.0), 0.0);
}

TEST(Decide, Examples) {
  const Decision zero = decide(0.0, 1, 0.05);
  EXPECT_EQ(zero.p_value, 1.0);
  EXPECT_FALSE(zero.reject);
  const Decision eight = decide(8.0, 1, 0.05);
  EXPECT_NEAR(eight.p_value, 0.00468, 1e-5);
  EXPECT_TRUE(eight.reject);
  const double q = chi2_quantile(1, 0.95);
  EXPECT_FALSE(decide(q * (1 - 1e-9), 1, 0.05).reject);
  EXPECT_TRUE(decide(q * (1 + 1e-9), 1, 0.05).reject);
  EXPECT_FALSE(decide(1e6, 1, 0.0).reject);
  EXPECT_THROW(decide(1.0, 1, 1.5), Error);
  EXPECT_THROW(decide(std::nan(""), 1, 0.05), Error);
}

TEST(NestedStatistics, MonotoneInDimension) {
  const auto nest = make_nested_cosine_family(normal_base(), 6);
  const ScoreSystem sys = build_simple_scores(ConvolvedModel(nest.level(6), normal_noise(1.0)));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.2, 1.6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> y(200);
    for (double& v : y) v = nd(rng);
    const std::vector<double> u = nested_statistics(exact_scores(sys, y));
    for (std::size_t k = 1; k < u.size(); ++k) EXPECT_GE(u[k], u[k - 1] - 1e-8);
    for (double v : u) EXPECT_GE(v, 0.0);
  }
}

TEST(NestedStatistics, AgreeWithDirectStatistic) {
  const auto nest = make_nested_cosine_family(normal_base(), 3);
  const ScoreSystem sys = build_simple_scores(ConvolvedModel(nest.level(3), normal_noise(1.0)));
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd(0.0, 1.5);
  std::vector<double> y(100);
  for (double& v : y) v = nd(rng);
  const EstimatedScores e = exact_scores(sys, y);
  const std::vector<double> u = nested_statistics(e);
  for (int k = 1; k <= 3; ++k) {
    const ScoreSystem lead = sys.leading(k);
    const double direct = quadratic_statistic(e.values.leftCols(k), lead.L()).value;
    EXPECT_NEAR(u[static_cast<std::size_t>(k - 1)], direct, 1e-9 * std::max(1.0, direct));
  }
}
