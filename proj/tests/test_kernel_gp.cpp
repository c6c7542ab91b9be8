#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbo/errors.hpp"
#include "fbo/kernel_gp.hpp"
#include "fbo/rng.hpp"

using namespace fbo;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vector random_point(RngStream& rng, std::size_t dim) {
  Vector x(static_cast<Eigen::Index>(dim));
  for (auto& v : x) v = rng.uniform();
  return x;
}

// Brute-force kernel, written out per coordinate.
double se_oracle(const Vector& a, const Vector& b, double l, double s0) {
  double d2 = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) d2 += (a(i) - b(i)) * (a(i) - b(i));
  return s0 * std::exp(-d2 / (2.0 * l * l));
}

}  // namespace

TEST(SeKernel, ZeroDistanceIsSignalVariance) {
  EXPECT_DOUBLE_EQ(se_kernel(vec({0.4}), vec({0.4}), {0.03, 1.0}), 1.0);
  EXPECT_DOUBLE_EQ(se_kernel(vec({0.1, 0.2}), vec({0.1, 0.2}), {0.5, 2.5}), 2.5);
}

TEST(SeKernel, ScalarValues) {
  EXPECT_NEAR(se_kernel(vec({0.0}), vec({0.03}), {0.03, 1.0}), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(se_kernel(vec({0.0}), vec({0.03}), {0.03, 1.0}), 0.606531, 1e-6);
  const double far = se_kernel(vec({0.0}), vec({0.3}), {0.03, 1.0});
  EXPECT_NEAR(far / std::exp(-50.0), 1.0, 1e-12);
  EXPECT_NEAR(far, 1.93e-22, 0.01e-22);
}

TEST(SeKernel, SymmetricAndBounded) {
  RngStream rng(7);
  for (int i = 0; i < 500; ++i) {
    const std::size_t d = 1 + rng.index(4);
    const Vector a = random_point(rng, d), b = random_point(rng, d);
    const KernelHyper h{rng.uniform(0.01, 2.0), rng.uniform(0.1, 3.0)};
    EXPECT_EQ(se_kernel(a, b, h), se_kernel(b, a, h));
    EXPECT_LE(se_kernel(a, b, h), h.signal_variance);
    EXPECT_NEAR(se_kernel(a, b, h), se_oracle(a, b, h.lengthscale, h.signal_variance), 1e-14);
  }
}

TEST(SeKernel, DimensionMismatchIsUsageError) {
  EXPECT_THROW(se_kernel(vec({0.1}), vec({0.1, 0.2}), {0.1, 1.0}), UsageError);
}

TEST(KernelHyper, RejectsNonPositive) {
  EXPECT_THROW(GpModel(KernelHyper{0.0, 1.0}, 0.01), UsageError);
  EXPECT_THROW(GpModel(KernelHyper{0.1, -1.0}, 0.01), UsageError);
}

TEST(Domain, RejectsDuplicatesAndEmpty) {
  Matrix pts(3, 1);
  pts << 0.1, 0.2, 0.1;
  EXPECT_THROW(Domain{pts}, UsageError);
  EXPECT_THROW(Domain{Matrix(0, 1)}, UsageError);
  const Domain grid = Domain::uniform_grid_1d(11);
  EXPECT_EQ(grid.size(), 11u);
  EXPECT_DOUBLE_EQ(grid.point(0)(0), 0.0);
  EXPECT_DOUBLE_EQ(grid.point(10)(0), 1.0);
  EXPECT_EQ(grid.find(grid.point(4)), 4u);
  EXPECT_FALSE(grid.find(vec({0.55})).has_value());
}

TEST(GpPosterior, EmptyHistoryIsPrior) {
  GpModel m({0.03, 1.0}, 0.01);
  const Moments p = m.predict(vec({0.3}));
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_DOUBLE_EQ(p.variance, 1.0);
}

TEST(GpPosterior, OneObservationByHand) {
  GpModel m({0.03, 1.0}, 0.01);
  m.add_observation(vec({0.5}), 1.0);
  const Moments p = m.predict(vec({0.5}));
  EXPECT_NEAR(p.mean, 1.0 / 1.01, 1e-8);
  EXPECT_NEAR(p.variance, 1.0 - 1.0 / 1.01, 1e-8);
  EXPECT_NEAR(p.mean, 0.990099, 1e-6);
  EXPECT_NEAR(p.variance, 0.009901, 1e-6);
}

TEST(GpPosterior, InterpolationShrinkage) {
  RngStream rng(3);
  for (int i = 0; i < 50; ++i) {
    const KernelHyper h{rng.uniform(0.01, 1.0), rng.uniform(0.2, 3.0)};
    const double noise = rng.uniform(1e-4, 1.0);
    const double y = rng.normal();
    const Vector x = random_point(rng, 2);
    GpModel m(h, noise);
    m.add_observation(x, y);
    const double k = h.signal_variance + m.jitter();
    EXPECT_NEAR(m.predict(x).mean, y * h.signal_variance / (k + noise), 1e-12 * (1.0 + std::abs(y)));
  }
}

TEST(GpPosterior, FarQueryRecoversPrior) {
  GpModel m({0.03, 1.0}, 0.01);
  m.add_observation(vec({0.0}), 2.0);
  m.add_observation(vec({0.01}), -1.0);
  const Moments p = m.predict(vec({5.0}));
  EXPECT_NEAR(p.mean, 0.0, 1e-12);
  EXPECT_NEAR(p.variance, 1.0, 1e-12);
}

// Cached factorization against an LU solve of the explicit system.
TEST(GpPosterior, MatchesDenseSolveOnRandomInstances) {
  RngStream rng(11);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t d = 1 + rng.index(3);
    const std::size_t t = rng.index(51);
    const KernelHyper h{rng.uniform(0.05, 1.0), rng.uniform(0.5, 2.0)};
    const double noise = rng.uniform(1e-3, 0.5);
    GpModel m(h, noise);
    std::vector<Vector> xs;
    Vector y(static_cast<Eigen::Index>(t));
    for (std::size_t i = 0; i < t; ++i) {
      xs.push_back(random_point(rng, d));
      y(static_cast<Eigen::Index>(i)) = rng.normal();
      m.add_observation(xs.back(), y(static_cast<Eigen::Index>(i)));
    }
    Matrix a(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t));
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            se_oracle(xs[i], xs[j], h.lengthscale, h.signal_variance) + (i == j ? noise + m.jitter() : 0.0);
    const Eigen::FullPivLU<Matrix> lu(a);
    for (int q = 0; q < 5; ++q) {
      const Vector x = random_point(rng, d);
      Vector k(static_cast<Eigen::Index>(t));
      for (std::size_t i = 0; i < t; ++i) k(static_cast<Eigen::Index>(i)) = se_oracle(xs[i], x, h.lengthscale, h.signal_variance);
      const double mean = t ? k.dot(lu.solve(y)) : 0.0;
      const double var = h.signal_variance - (t ? k.dot(lu.solve(k)) : 0.0);
      const Moments p = m.predict(x);
      EXPECT_LE(std::abs(p.mean - mean), 1e-8 * std::max(1.0, std::abs(mean)));
      EXPECT_LE(std::abs(p.variance - std::max(var, 0.0)), 1e-8 * h.signal_variance);
      EXPECT_GE(p.variance, 0.0);
      EXPECT_LE(p.variance, h.signal_variance + 1e-8);
    }
  }
}

TEST(LogMarginalLikelihood, ScalarExample) {
  GpModel m({0.03, 1.0}, 0.01);
  m.add_observation(vec({0.2}), 0.0);
  const double expected = -0.5 * std::log(1.01) - 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(m.log_marginal_likelihood(), expected, 1e-8);
  EXPECT_NEAR(m.log_marginal_likelihood(), -0.923914, 1e-6);
}

TEST(LogMarginalLikelihood, EmptyModelIsUsageError) {
  GpModel m({0.03, 1.0}, 0.01);
  EXPECT_THROW(m.log_marginal_likelihood(), UsageError);
}

TEST(LogMarginalLikelihood, DuplicateInputsStayFinite) {
  GpModel m({0.1, 1.0}, 1e-12);
  m.add_observation(vec({0.3}), 0.0);
  m.add_observation(vec({0.3}), 0.0);
  EXPECT_TRUE(std::isfinite(m.log_marginal_likelihood()));
}

TEST(LogMarginalLikelihood, MatchesDirectEvaluation) {
  const KernelHyper h{0.2, 1.3};
  const double noise = 0.05;
  GpModel a(h, noise);
  std::vector<Vector> xs{vec({0.1}), vec({0.35}), vec({0.8})};
  Vector y(3);
  y << 0.4, -0.2, 0.9;
  for (int i = 0; i < 2; ++i) a.add_observation(xs[i], y(i));
  GpModel b = a;
  b.add_observation(xs[2], y(2));

  auto direct = [&](int t, double jitter) {
    Matrix k(t, t);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) k(i, j) = se_oracle(xs[i], xs[j], 0.2, 1.3) + (i == j ? noise + jitter : 0.0);
    const Vector yt = y.head(t);
    return -0.5 * yt.dot(k.fullPivLu().solve(yt)) - 0.5 * std::log(k.determinant()) -
           0.5 * t * std::log(2.0 * std::numbers::pi);
  };
  EXPECT_NEAR(a.log_marginal_likelihood(), direct(2, a.jitter()), 1e-9);
  EXPECT_NEAR(b.log_marginal_likelihood(), direct(3, b.jitter()), 1e-9);
  EXPECT_NE(a.log_marginal_likelihood(), b.log_marginal_likelihood());
}

TEST(InfoGain, EmptyIsZeroAndScalarExample) {
  GpModel m({0.03, 1.0}, 0.01);
  EXPECT_EQ(m.info_gain(), 0.0);
  m.add_observation(vec({0.1}), 0.3);
  EXPECT_NEAR(m.info_gain(), 0.5 * std::log(101.0), 1e-9);
  EXPECT_NEAR(m.info_gain(), 2.307560, 1e-6);
}

TEST(InfoGain, DuplicateAddsLess) {
  GpModel m({0.1, 1.0}, 0.01);
  m.add_observation(vec({0.4}), 0.0);
  const double first = m.info_gain();
  m.add_observation(vec({0.4}), 0.0);
  const double second = m.info_gain() - first;
  EXPECT_GT(second, 0.0);
  EXPECT_LT(second, first);
}

TEST(InfoGain, NondecreasingAlongRandomSequences) {
  RngStream rng(5);
  for (int s = 0; s < 20; ++s) {
    GpModel m({rng.uniform(0.02, 0.5), 1.0}, rng.uniform(1e-3, 0.1));
    double prev = 0.0;
    for (int i = 0; i < 40; ++i) {
      m.add_observation(random_point(rng, 1), rng.normal());
      const double g = m.info_gain();
      EXPECT_GE(g, prev);
      prev = g;
    }
  }
}

TEST(Cholesky, JitterEscalatesThenFails) {
  Matrix singular = Matrix::Ones(4, 4);
  const JitteredCholesky c = cholesky_with_jitter(singular, 1.0);
  EXPECT_GE(c.jitter, 1e-9);
  EXPECT_LE(c.jitter, 1e-3);
  Matrix indefinite = Matrix::Identity(3, 3);
  indefinite(2, 2) = -1.0;
  EXPECT_THROW(cholesky_with_jitter(indefinite, 1.0), NumericalError);
}

TEST(SampleGpFunction, ZeroBetaReturnsMean) {
  const Domain domain = Domain::uniform_grid_1d(40);
  GpModel m({0.1, 1.0}, 0.01);
  m.add_observation(domain.point(3), 0.7);
  m.add_observation(domain.point(20), -0.4);
  RngStream rng(1);
  const Vector mean = m.predict_mean(domain.points());
  EXPECT_EQ(sample_gp_function(m, 0.0, domain, rng), mean);
  const GridPrior prior(domain, m.hyper());
  const std::size_t idx[] = {3, 20};
  EXPECT_EQ(sample_gp_function(m, 0.0, prior, idx, rng), mean);
}

TEST(SampleGpFunction, DeterministicGivenSeed) {
  const Domain domain = Domain::uniform_grid_1d(30);
  GpModel m({0.1, 1.0}, 0.01);
  m.add_observation(domain.point(7), 0.2);
  RngStream a(42), b(42);
  EXPECT_EQ(sample_gp_function(m, 1.0, domain, a), sample_gp_function(m, 1.0, domain, b));
  const GridPrior prior(domain, m.hyper());
  RngStream c(42), d(42);
  EXPECT_EQ(sample_gp_function(m, 1.0, prior, c), sample_gp_function(m, 1.0, prior, d));
}

TEST(SampleGpFunction, CapacityGuard) {
  const Domain domain = Domain::uniform_grid_1d(60);
  GpModel m({0.1, 1.0}, 0.01);
  RngStream rng(1);
  EXPECT_THROW(sample_gp_function(m, 1.0, domain, rng, 50), CapacityError);
  EXPECT_THROW(GridPrior(domain, m.hyper(), 50), CapacityError);
}

TEST(SampleGpFunction, PriorDrawsHaveZeroMean) {
  const Domain domain = Domain::uniform_grid_1d(25);
  GpModel m({0.1, 1.0}, 0.01);
  const GridPrior prior(domain, m.hyper());
  RngStream rng(9);
  const int n = 10000;
  Vector sum = Vector::Zero(25);
  for (int i = 0; i < n; ++i) sum += sample_gp_function(m, 1.0, prior, rng);
  const double se = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index i = 0; i < 25; ++i) EXPECT_LT(std::abs(sum(i) / n), 4.0 * se) << "point " << i;
}

// Per-point variance of posterior draws against the analytic posterior variance, both routes.
TEST(SampleGpFunction, PosteriorVarianceMatches) {
  const Domain domain = Domain::uniform_grid_1d(20);
  GpModel m({0.15, 1.0}, 0.01);
  m.add_observation(domain.point(2), 0.5);
  m.add_observation(domain.point(11), -0.3);
  m.add_observation(domain.point(17), 0.1);
  const GridPrior prior(domain, m.hyper());
  const Vector mean = m.predict_mean(domain.points());
  const int n = 10000;
  for (int route = 0; route < 2; ++route) {
    RngStream rng(100 + route);
    Vector s1 = Vector::Zero(20), s2 = Vector::Zero(20);
    for (int i = 0; i < n; ++i) {
      const Vector f = route == 0 ? sample_gp_function(m, 1.0, domain, rng) : sample_gp_function(m, 1.0, prior, rng);
      s1 += f;
      s2 += f.cwiseProduct(f);
    }
    for (Eigen::Index i = 0; i < 20; ++i) {
      const double var = m.predict(domain.point(static_cast<std::size_t>(i))).variance;
      const double emp_mean = s1(i) / n;
      const double emp_var = (s2(i) - n * emp_mean * emp_mean) / (n - 1);
      const double se = var * std::sqrt(2.0 / (n - 1)) + 1e-9;
      EXPECT_LT(std::abs(emp_var - var), 5.0 * se) << "route " << route << " point " << i;
      EXPECT_LT(std::abs(emp_mean - mean(i)), 5.0 * std::sqrt(var / n) + 1e-9);
    }
  }
}

TEST(FitHyperparameters, SingleCandidate) {
  std::vector<Observation> obs{{vec({0.1}), 0.3}, {vec({0.5}), -0.1}};
  const KernelHyper grid[] = {{0.7, 1.0}};
  EXPECT_EQ(fit_hyperparameters(obs, 0.01, grid), grid[0]);
}

TEST(FitHyperparameters, PathologicalGridFallsBackToFirstWithWarning) {
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  std::vector<Observation> obs{{vec({0.1}), std::numeric_limits<double>::infinity()}};
  const KernelHyper grid[] = {{0.2, 1.0}, {0.5, 1.0}};
  EXPECT_EQ(fit_hyperparameters(obs, 0.01, grid), grid[0]);
  set_warning_sink(nullptr);
  EXPECT_FALSE(warnings.empty());
}

TEST(FitHyperparameters, RecoversGeneratingLengthscale) {
  const KernelHyper grid[] = {{0.01, 1.0}, {0.03, 1.0}, {0.1, 1.0}, {0.3, 1.0}};
  RngStream rng(2024);
  int hits = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const int t = 50;
    std::vector<Vector> xs;
    for (int i = 0; i < t; ++i) xs.push_back(random_point(rng, 1));
    Matrix k(t, t);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) k(i, j) = se_oracle(xs[i], xs[j], 0.03, 1.0) + (i == j ? 1e-8 : 0.0);
    const Matrix l = Eigen::LLT<Matrix>(k).matrixL();
    Vector z(t);
    for (auto& v : z) v = rng.normal();
    const Vector f = l * z;
    std::vector<Observation> obs;
    for (int i = 0; i < t; ++i) obs.push_back({xs[i], f(i) + 0.1 * rng.normal()});
    hits += fit_hyperparameters(obs, 0.01, grid) == grid[1];
  }
  EXPECT_GE(hits, 40);
}

TEST(Argmax, FirstMaximumWins) {
  EXPECT_EQ(argmax(vec({0.1, 0.5, 0.5, 0.2})), 1u);
  EXPECT_EQ(argmax(vec({3.0})), 0u);
}
