#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dscore/scores.hpp"
#include "dscore/teststat.hpp"

using namespace dscore;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

QuadratureSpec tight() {
  QuadratureSpec s;
  s.rel_tol = 1e-11;
  s.abs_tol = 1e-15;
  s.max_subdivisions = 4000;
  return s;
}

// Independent second-moment oracle: fixed fine Simpson rule over y.
template <class F>
double simpson(F f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST(SimpleScores, GaussianLocationInKnownGaussianNoise) {
  for (double eta : {0.5, 1.0, 2.0}) {
    const ConvolvedModel m(gaussian_location_family(), normal_noise(eta));
    const ScoreSystem sys = build_simple_scores(m);
    EXPECT_NEAR(sys.L()(0, 0), 1.0 + eta * eta, 1e-8 * (1.0 + eta * eta));
    for (double y : {-4.0, -1.0, 0.0, 0.5, 3.0}) {
      EXPECT_NEAR(sys.score(y)[0], y / (1.0 + eta * eta), 1e-9);
    }
    EXPECT_NEAR(sys.mean()[0], 0.0, 1e-6);
  }
}

TEST(SimpleScores, ExponentialPathMatchesGenericPath) {
  const auto nest = make_nested_cosine_family(uniform_base(), 3);
  const ConvolvedModel fast_model(nest.level(3), normal_noise(0.5));
  const ConvolvedModel generic_model(with_numeric_gradient(nest.level(3)), normal_noise(0.5));
  const ScoreSystem fast = build_simple_scores(fast_model);
  ScoreOptions g;
  g.path = ScorePath::generic;
  const ScoreSystem generic = build_simple_scores(generic_model, g);
  double worst = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double y = -1.0 + 0.03 * i;
    worst = std::max(worst, (fast.score(y) - generic.score(y)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(SimpleScores, ExponentialPathNeedsExponentialFamily) {
  const ConvolvedModel m(gaussian_location_family(), normal_noise(1.0));
  ScoreOptions o;
  o.path = ScorePath::exponential;
  EXPECT_THROW(build_simple_scores(m, o), Error);
}

TEST(SimpleScores, MeanZeroAndInverseInformation) {
  const auto nest = make_nested_cosine_family(normal_base(), 4);
  const ConvolvedModel m(nest.level(4), normal_noise(0.8));
  const ScoreSystem sys = build_simple_scores(m);
  EXPECT_LT(sys.mean().cwiseAbs().maxCoeff(), 1e-6);

  // Second moments recomputed on the generic path with tighter tolerances.
  const ConvolvedModel generic_model(nest.level(4), normal_noise(0.8), tight());
  ScoreOptions o;
  o.path = ScorePath::generic;
  o.expectation = tight();
  const ScoreSystem other = build_simple_scores(generic_model, o);
  const Matrix prod = sys.L() * other.information();
  EXPECT_LT((prod - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(SimpleScores, SecondMomentsMatchFixedRuleOracle) {
  const auto nest = make_nested_cosine_family(uniform_base(), 2);
  const ConvolvedModel m(nest.level(2), normal_noise(0.5));
  const ScoreSystem sys = build_simple_scores(m);
  const Interval w = sys.window();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double oracle = simpson(
          [&](double y) {
            const Vector s = sys.score(y);
            return sys.density(y) * s[i] * s[j];
          },
          w.lo, w.hi, 4000);
      EXPECT_NEAR(sys.information()(i, j), oracle, 1e-9);
    }
  }
}

TEST(SimpleScores, RejectsParametricNoise) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  EXPECT_THROW(build_simple_scores(m), Error);
}

TEST(SimpleScores, SingularInformationIsReported) {
  SignalFamily fam = gaussian_location_family();
  fam.name = "location with an inert second parameter";
  fam.dim = 2;
  fam.theta_null = Vector::Zero(2);
  fam.unit_gaussian_location = false;
  fam.bind = [](const Vector& theta) -> PointEval {
    const double mu = theta[0];
    return [mu](double x, std::span<double> grad) {
      const double v = normal::pdf(x, mu, 1.0);
      if (!grad.empty()) {
        grad[0] = (x - mu) * v;
        grad[1] = 0.0;
      }
      return v;
    };
  };
  fam.support = [](const Vector& theta, double tail) {
    const double z = normal::upper_tail_point(tail);
    return Interval{theta[0] - z, theta[0] + z};
  };
  const ConvolvedModel m(fam, normal_noise(1.0));
  try {
    build_simple_scores(m);
    FAIL() << "expected IllConditionedInformation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IllConditionedInformation);
  }
}

TEST(SimpleScores, LeadingSystemIsCoherent) {
  const auto nest = make_nested_cosine_family(normal_base(), 4);
  const ScoreSystem full = build_simple_scores(ConvolvedModel(nest.level(4), normal_noise(1.0)));
  const ScoreSystem two = full.leading(2);
  const ScoreSystem direct = build_simple_scores(ConvolvedModel(nest.level(2), normal_noise(1.0)));
  EXPECT_LT((two.information() - direct.information()).cwiseAbs().maxCoeff(), 1e-9);
  for (double y : {-2.0, 0.3, 1.5}) {
    EXPECT_LT((two.score(y) - full.score(y).head(2)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((two.score(y) - direct.score(y)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(InformationBlocks, Example2CrossBlockVanishes) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  for (double theta : {0.0, 0.7}) {
    for (double eta : {0.5, 1.0, 1.5}) {
      const InformationBlocks b = information_blocks(m, vec({theta}), vec({eta}));
      const double v = eta * eta + 1.0;
      EXPECT_NEAR(b.i12(0, 0), 0.0, 1e-7);
      EXPECT_EQ(b.i21(0, 0), b.i12(0, 0));
      EXPECT_NEAR(b.i11(0, 0), 1.0 / v, 1e-8);
      EXPECT_NEAR(b.i22(0, 0), 2.0 * eta * eta / (v * v), 1e-8);
    }
  }
}

TEST(InformationBlocks, Example3NuisanceInformationAtUnitScale) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  for (double theta : {-1.0, 0.0, 2.5}) {
    const InformationBlocks b = information_blocks(m, vec({theta}), vec({1.0}));
    EXPECT_NEAR(b.i22(0, 0), 0.5, 1e-6);
    EXPECT_NEAR(b.i22(0, 0), example3_constants(1.0).c, 1e-6);
  }
}

TEST(InformationBlocks, FullMatrixIsPositiveSemidefinite) {
  const auto nest = make_nested_cosine_family(normal_base(), 4);
  const ConvolvedModel m(nest.level(4), gaussian_noise_family());
  const InformationBlocks b = information_blocks(m, Vector::Zero(4), vec({0.8}));
  const Matrix full = b.full();
  EXPECT_LT((full - full.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(full);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9);
}

TEST(InformationBlocks, KnownNoiseIsRejected) {
  const ConvolvedModel m(gaussian_location_family(), normal_noise(1.0));
  try {
    information_blocks(m, vec({0.0}), Vector(0));
    FAIL() << "expected NotParametricNoise";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotParametricNoise);
  }
}

TEST(EfficientScores, Example2) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  for (double eta : {0.5, 1.0, 2.0}) {
    const ScoreSystem sys = build_efficient_scores(m, vec({0.4}), vec({eta}));
    const double v = eta * eta + 1.0;
    EXPECT_NEAR(sys.L()(0, 0), v, 1e-7 * v);
    for (double y : {-2.0, 0.4, 3.0}) EXPECT_NEAR(sys.score(y)[0], (y - 0.4) / v, 1e-8);
    ASSERT_TRUE(sys.blocks().has_value());
  }
}

TEST(EfficientScores, Example3RoleSwapKeepsRawEtaScore) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  const double theta0 = 0.3, eta0 = 1.0;
  const ScoreSystem sys = build_efficient_scores(m, vec({theta0}), vec({eta0}), {}, Interest::noise);
  const Example3Constants c = example3_constants(eta0);
  EXPECT_NEAR(sys.L()(0, 0), 1.0 / c.c, 1e-6);
  for (double y : {-2.0, 0.0, 0.3, 1.7}) {
    const double raw = m.score_eta(vec({theta0}), vec({eta0}), y)[0];
    EXPECT_NEAR(sys.score(y)[0], raw, 1e-8);
    EXPECT_NEAR(sys.score(y)[0], c.c1 * (y - theta0) * (y - theta0) - c.c2, 1e-8);
  }
}

TEST(EfficientScores, ZeroCrossBlockLeavesThetaScoreUnchanged) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  const ScoreSystem sys = build_efficient_scores(m, vec({0.0}), vec({1.0}));
  for (double y : {-3.0, -0.5, 2.0}) {
    EXPECT_NEAR(sys.score(y)[0], m.score_theta(vec({0.0}), vec({1.0}), y)[0], 1e-12);
  }
}

TEST(EfficientScores, OrthogonalToNuisanceScore) {
  const auto nest = make_nested_cosine_family(normal_base(), 3);
  const ConvolvedModel m(nest.level(3), gaussian_noise_family());
  const Vector theta0 = Vector::Zero(3);
  const Vector eta0 = vec({0.8});
  const ScoreSystem sys = build_efficient_scores(m, theta0, eta0);
  const auto b = m.bind(theta0, eta0);
  for (int j = 0; j < 3; ++j) {
    QuadratureSpec s;
    s.rel_tol = 1e-9;
    s.abs_tol = 1e-13;
    s.max_subdivisions = 1000;
    const double inner = integrate(
        [&](double y) {
          const ConvolutionValue v = b.evaluate(y, false, true);
          if (!v.positive) return 0.0;
          return sys.score(y)[j] * v.d_eta[0];
        },
        sys.window(), s);
    EXPECT_NEAR(inner, 0.0, 1e-6) << j;
  }
  EXPECT_LT(sys.mean().cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EfficientScores, InformationMatchesSecondMomentOfProjectedScore) {
  const auto nest = make_nested_cosine_family(normal_base(), 3);
  const ConvolvedModel m(nest.level(3), gaussian_noise_family());
  const ScoreSystem sys = build_efficient_scores(m, Vector::Zero(3), vec({1.2}));
  QuadratureSpec s;
  s.rel_tol = 1e-11;
  s.max_subdivisions = 4000;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      const double e = integrate(
          [&](double y) {
            const Vector l = sys.score(y);
            return sys.density(y) * l[i] * l[j];
          },
          sys.window(), s);
      EXPECT_NEAR(sys.information()(i, j), e, 1e-9) << i << "," << j;
    }
  }
  EXPECT_LT((sys.L() * sys.information() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ScoreTable, ReproducesDirectEvaluation) {
  const auto nest = make_nested_cosine_family(normal_base(), 5);
  const ConvolvedModel m(nest.level(5), gaussian_noise_family());
  for (double eta : {0.05, 0.7, 2.0}) {
    const ScoreSystem sys = build_efficient_scores(m, Vector::Zero(5), vec({eta}));
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd(0.0, std::sqrt(1.0 + eta * eta));
    std::vector<double> y(600);
    for (double& v : y) v = nd(rng);
    const Matrix direct = sys.evaluate(y);
    const Matrix tab = evaluate_scores(sys, y);
    EXPECT_LT((direct - tab).cwiseAbs().maxCoeff(), 1e-8) << eta;
  }
}

TEST(ScoreTable, FallsBackWhenInterpolationFails) {
  // Uniform signal with uniform noise has kinks in y; the table must either
  // verify or fall back, and the values must agree with direct evaluation.
  const auto nest = make_nested_cosine_family(uniform_base(), 2);
  const ScoreSystem sys = build_simple_scores(ConvolvedModel(nest.level(2), uniform_noise(-0.2, 0.2)));
  std::vector<double> y;
  for (int i = 0; i < 400; ++i) y.push_back(-0.15 + 1.3 * i / 399.0);
  EXPECT_LT((sys.evaluate(y) - evaluate_scores(sys, y)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Plugin, Example2WorkedExamples) {
  {
    const double theta0 = 1.5;
    const std::vector<double> y{theta0 - 1.0, theta0 + 1.0};
    const EstimatedScores e = plugin_scores_example2(y, theta0);
    EXPECT_DOUBLE_EQ(e.L_hat(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(e.values(0, 0), -0.5);
    EXPECT_DOUBLE_EQ(e.values(1, 0), 0.5);
    EXPECT_NEAR(quadratic_statistic(e.values, e.L_hat).value, 0.0, 1e-15);
  }
  {
    const std::vector<double> y{0, 1, 2, 3, 4};
    const EstimatedScores e = plugin_scores_example2(y, 0.0);
    EXPECT_DOUBLE_EQ(e.L_hat(0, 0), 2.5);
    EXPECT_NEAR(quadratic_statistic(e.values, e.L_hat, StatKind::W).value, 8.0, 1e-12);
  }
}

TEST(Plugin, Example2DegenerateSample) {
  const std::vector<double> same{1.0, 1.0, 1.0};
  const std::vector<double> one{1.0};
  for (const auto* y : {&same, &one}) {
    try {
      plugin_scores_example2(*y, 0.0);
      FAIL() << "expected DegenerateSample";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateSample);
    }
  }
}

TEST(Plugin, SampleVarianceRootNRate) {
  // Median |s^2 - Var Y| should shrink like n^(-1/2).
  std::mt19937_64 rng(101);
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0));
  std::vector<double> med;
  const std::vector<int> ns{100, 1000, 10000};
  for (int n : ns) {
    std::vector<double> dev;
    for (int r = 0; r < 200; ++r) {
      std::vector<double> y(static_cast<std::size_t>(n));
      for (double& v : y) v = nd(rng);
      dev.push_back(std::abs(sample_variance(y) - 2.0));
    }
    std::nth_element(dev.begin(), dev.begin() + 100, dev.end());
    med.push_back(dev[100]);
  }
  const double slope = (std::log(med[2]) - std::log(med[0])) / (std::log(1e4) - std::log(1e2));
  EXPECT_NEAR(slope, -0.5, 0.15);
}

TEST(Plugin, Example3Constants) {
  const Example3Constants c = example3_constants(1.0);
  EXPECT_DOUBLE_EQ(c.c1, 0.25);
  EXPECT_DOUBLE_EQ(c.c2, 0.5);
  EXPECT_DOUBLE_EQ(1.0 / c.c, 2.0);
  const std::vector<double> y{0.7, 0.7, 0.7, 0.7};
  const EstimatedScores e = plugin_scores_example3(y, 1.0);
  EXPECT_DOUBLE_EQ(e.L_hat(0, 0), 2.0);
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(e.values(j, 0), -0.5);
}

TEST(Plugin, Example3PluginGapDecays) {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0));
  const Example3Constants c = example3_constants(1.0);
  std::vector<double> med;
  for (int n : {100, 1000, 10000}) {
    std::vector<double> gap;
    for (int r = 0; r < 100; ++r) {
      std::vector<double> y(static_cast<std::size_t>(n));
      for (double& v : y) v = nd(rng);
      const EstimatedScores e = plugin_scores_example3(y, 1.0);
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += e.values(j, 0) - (c.c1 * y[static_cast<std::size_t>(j)] * y[static_cast<std::size_t>(j)] - c.c2);
      gap.push_back(std::abs(s) / std::sqrt(static_cast<double>(n)));
    }
    std::nth_element(gap.begin(), gap.begin() + 50, gap.end());
    med.push_back(gap[50]);
  }
  EXPECT_GT(med[0], med[1]);
  EXPECT_GT(med[1], med[2]);
  EXPECT_LT(med[2], 0.1);
}

TEST(Plugin, GenericCompositeMatchesExample2) {
  const ConvolvedModel m(gaussian_location_family(), gaussian_noise_family());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.2, 1.6);
  std::vector<double> y(300);
  for (double& v : y) v = nd(rng);
  const EstimatedScores a = plugin_efficient_scores(m, vec({0.0}), y);
  const EstimatedScores b = plugin_scores_example2(y, 0.0);
  EXPECT_NEAR(a.L_hat(0, 0), b.L_hat(0, 0), 1e-7 * b.L_hat(0, 0));
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(a.nuisance_hat[0], b.nuisance_hat[0], 1e-12);
}

TEST(SpdBounds, QuadraticFormBoundedBelowByMinEigenvalue) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_real_distribution<double> delta_u(0.01, 2.0);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const int k = dim(rng);
    const double delta = delta_u(rng);
    Matrix q = Matrix::NullaryExpr(k, k, [&] { return nd(rng); });
    Eigen::HouseholderQR<Matrix> qr(q);
    const Matrix Q = qr.householderQ();
    Vector lam(k);
    for (int i = 0; i < k; ++i) lam[i] = delta * (1.0 + 1e-6) + std::abs(nd(rng)) * 3.0;
    const Matrix A = Q * lam.asDiagonal() * Q.transpose();
    const Vector x = Vector::NullaryExpr(k, [&] { return nd(rng); });
    if (!(x.dot(A * x) > delta * x.squaredNorm())) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(SpdBounds, ConvergentSequencesEventuallyExceedBound) {
  std::mt19937_64 rng(37);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + t % 6;
    Matrix G = Matrix::NullaryExpr(k, k, [&] { return nd(rng); });
    const Matrix A = G * G.transpose() + 0.5 * Matrix::Identity(k, k);
    Matrix B = Matrix::NullaryExpr(k, k, [&] { return nd(rng); });
    B = symmetrize(B) * 5.0;
    Eigen::SelfAdjointEigenSolver<Matrix> ea(A);
    const double delta = 0.5 * ea.eigenvalues().minCoeff();
    // A_n = A + B/n exceeds delta once ||B||/n < lambda_min(A) - delta.
    Eigen::SelfAdjointEigenSolver<Matrix> eb(B);
    const double bnorm = eb.eigenvalues().cwiseAbs().maxCoeff();
    const int n0 = static_cast<int>(std::ceil(bnorm / (ea.eigenvalues().minCoeff() - delta))) + 1;
    for (int n = n0; n < n0 + 50; ++n) {
      Eigen::SelfAdjointEigenSolver<Matrix> en(A + B / n);
      EXPECT_GT(en.eigenvalues().minCoeff(), delta) << "trial " << t << " n " << n;
    }
  }
}
