#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "nef/harness.hpp"
#include "nef/problems.hpp"

using namespace nef;

namespace {

double rel_err(const DenseVector& a, const DenseVector& b) {
  const double scale = std::max(norm2(b), 1e-8);
  return norm2(a - b) / scale;
}

Dataset one_row(std::initializer_list<double> a, int b) {
  Dataset ds;
  ds.dim = a.size();
  SparseRow row;
  std::uint32_t j = 1;
  for (double v : a) {
    if (v != 0.0) row.push_back({j, v});
    ++j;
  }
  ds.rows.push_back(row);
  ds.labels.push_back(b);
  return ds;
}

Dataset synthetic(std::size_t n, std::size_t d, std::uint64_t seed) {
  RngStream rng = seeded_rng(seed);
  return generate_synthetic(n, d, rng);
}

}  // namespace

// --- polynomial ------------------------------------------------------------

TEST(PolynomialTest, ValueExamples) {
  const double lambda = 0.1;
  PolynomialProblem p(lambda, {lambda / 24.0});
  EXPECT_EQ(p.poly_value(DenseVector{0.0}), 0.0);
  EXPECT_NEAR(p.poly_value(DenseVector{1.0}), 0.1 / 24.0 + 0.1 * 0.5, 1e-15);
  EXPECT_NEAR(p.poly_value(DenseVector{1.0}), 0.0541667, 1e-7);
}

TEST(PolynomialTest, GradExamples) {
  const double lambda = 0.1;
  PolynomialProblem p(lambda, {lambda / 24.0});
  EXPECT_EQ(p.poly_grad(DenseVector{0.0}), DenseVector{0.0});
  EXPECT_NEAR(p.poly_grad(DenseVector{1.0})[0], 4.0 * (0.1 / 24.0) + 0.2 / 4.0, 1e-15);
  EXPECT_NEAR(p.poly_grad(DenseVector{1.0})[0], 0.0666667, 1e-7);
  EXPECT_NEAR(finite_diff_grad(p, 0, DenseVector{1.0}, 1e-6)[0], 0.0666667, 1e-7);
}

TEST(PolynomialTest, NonnegativeEverywhere) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  RngStream rng = seeded_rng(1);
  for (int t = 0; t < 1000; ++t) EXPECT_GE(p.value(sample_gaussian(rng, 4, 0.0, 10.0)), 0.0);
}

TEST(PolynomialTest, NegativeCurvatureWitness) {
  // f'' = 12 a x^2 + 2 lambda (1 - 3x^2)/(1 + x^2)^3 vanishes at |x| = 1 and is negative just inside.
  const PolynomialProblem p = make_polynomial(2, 1.0, 4.0);
  const double h = 1e-4;
  const DenseVector x{0.8, 0.8};
  DenseVector up = x, down = x;
  up[0] += h;
  down[0] -= h;
  const double curv = (p.value(up) - 2.0 * p.value(x) + p.value(down)) / (h * h);
  const double lambda = p.lambda();
  const double analytic = 12.0 * (lambda / 24.0) * 0.64 + 2.0 * lambda * (1.0 - 3.0 * 0.64) / std::pow(1.64, 3);
  EXPECT_LT(analytic, 0.0);
  EXPECT_NEAR(curv, analytic, 1e-6);
}

TEST(PolynomialTest, GradMatchesFiniteDifferences) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  RngStream rng = seeded_rng(21);
  for (int t = 0; t < 100; ++t) {
    const DenseVector x = sample_gaussian(rng, 4, 0.0, 3.0);
    const DenseVector g = p.client_grad(0, x);
    EXPECT_LT(rel_err(finite_diff_grad(p, 0, x, 1e-6), g), 1e-5);
    EXPECT_LT(rel_err(finite_diff_grad(p, 0, x, 1e-5), g), 1e-5);
  }
}

TEST(PolynomialTest, DimensionMismatch) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  EXPECT_THROW((void)p.value(DenseVector{1.0, 2.0}), DimensionError);
  EXPECT_THROW((void)p.client_grad(0, DenseVector{1.0}), DimensionError);
}

TEST(PolynomialTest, ConstantsExamples) {
  const PolynomialParams a = poly_constants(4, 1.0, 4.0);
  EXPECT_NEAR(a.lambda, 4.0 / 74.0, 1e-15);
  EXPECT_NEAR(a.lambda, 0.0540541, 1e-7);
  EXPECT_NEAR(a.coeffs[0], 0.00225225, 1e-8);
  EXPECT_EQ(a.constants.L0, 4.0);
  EXPECT_EQ(a.constants.L1, 1.0);

  EXPECT_NEAR(poly_constants(4, 8.0, 4.0).lambda, 1.28, 1e-14);

  RngStream rng = seeded_rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + rng.uniform_below(20);
    const double L1 = 0.1 + 10.0 * rng.uniform();
    const double L0 = 0.1 + 10.0 * rng.uniform();
    const double lambda = poly_constants(d, L1, L0).lambda;
    const double dd = static_cast<double>(d);
    EXPECT_NEAR(9.0 * lambda * dd * dd / (2.0 * L1 * L1) + 2.0 * lambda, L0, 1e-12 * L0);
  }
  EXPECT_THROW(poly_constants(0, 1.0, 4.0), ParameterError);
  EXPECT_THROW(poly_constants(4, 0.0, 4.0), ParameterError);
  EXPECT_THROW(poly_constants(4, 1.0, -1.0), ParameterError);
}

TEST(PolynomialTest, LFromD) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  EXPECT_NEAR(poly_L_from_D(p, 20.0), (4.0 / 74.0) * 2.0 * 400.0 / 2.0 + 8.0 / 74.0, 1e-12);
  EXPECT_NEAR(poly_L_from_D(p, 20.0), 21.7297, 1e-4);
  EXPECT_NEAR(poly_L_from_D(p, 1e-12), 2.0 * p.lambda(), 1e-15);
  const double first = poly_L_from_D(p, 3.0) - 2.0 * p.lambda();
  EXPECT_NEAR(poly_L_from_D(p, 6.0) - 2.0 * p.lambda(), 4.0 * first, 1e-12);
  EXPECT_THROW(poly_L_from_D(p, 0.0), ParameterError);
}

TEST(PolynomialTest, StochasticGradient) {
  PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  const DenseVector x{1.0, -2.0, 0.5, 3.0};
  RngStream rng = seeded_rng(5);
  EXPECT_EQ(p.stochastic_grad(0, x, {1, 0.0}, rng), p.client_grad(0, x));

  const double sigma = 2.0;
  const int draws = 10000;
  DenseVector mean(4);
  for (int t = 0; t < draws; ++t) mean += p.stochastic_grad(0, x, {1, sigma}, rng);
  mean *= 1.0 / draws;
  const DenseVector exact = p.client_grad(0, x);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_LE(std::abs(mean[j] - exact[j]), 4.0 * sigma / std::sqrt(draws * 4.0) * 2.0);
}

// --- logistic --------------------------------------------------------------

TEST(LogisticTest, ValueExamples) {
  const Dataset ds = synthetic(10, 3, 1);
  const LogisticProblem p(ds, 0.1);
  EXPECT_NEAR(p.value(DenseVector(3)), std::log(2.0), 1e-15);

  const LogisticProblem single(one_row({1.0, 0.0}, 1), 0.1);
  const double expected = std::log1p(std::exp(-10.0)) + 0.1 * (100.0 / 101.0);
  EXPECT_NEAR(single.value(DenseVector{10.0, 0.0}), expected, 1e-15);
  EXPECT_NEAR(single.value(DenseVector{10.0, 0.0}), 0.0990553, 1e-7);
}

TEST(LogisticTest, StableForLargeMargins) {
  const LogisticProblem p(one_row({1.0, 0.0}, 1), 0.0);
  EXPECT_NEAR(p.value(DenseVector{-1000.0, 0.0}), 1000.0, 1e-9);
  EXPECT_GE(p.value(DenseVector{1000.0, 0.0}), 0.0);
  EXPECT_TRUE(p.grad(DenseVector{-1000.0, 0.0}).all_finite());
  EXPECT_TRUE(p.grad(DenseVector{1000.0, 0.0}).all_finite());
}

TEST(LogisticTest, GradAtZero) {
  const LogisticProblem single(one_row({2.0, -3.0}, -1), 0.1);
  // -(1/2) b a with b = -1
  EXPECT_EQ(single.client_grad(0, DenseVector(2)), (DenseVector{1.0, -1.5}));

  const Dataset ds = synthetic(8, 3, 4);
  const LogisticProblem p(ds, 0.1, 1);
  DenseVector expected(3);
  for (std::size_t i = 0; i < ds.size(); ++i) expected.axpy(-0.5 * ds.labels[i] / 8.0, ds.dense_row(i));
  EXPECT_LT(norm2(p.client_grad(0, DenseVector(3)) - expected), 1e-15);
  EXPECT_LT(norm2(finite_diff_grad(p, 0, DenseVector(3), 1e-6) - expected), 1e-8);
}

TEST(LogisticTest, GradMatchesFiniteDifferences) {
  const LogisticProblem p(synthetic(20, 10, 7), 0.1);
  RngStream rng = seeded_rng(8);
  for (int t = 0; t < 100; ++t) {
    const DenseVector x = sample_gaussian(rng, 10, 0.0, 2.0);
    const std::size_t i = rng.uniform_below(p.num_clients());
    const DenseVector g = p.client_grad(i, x);
    EXPECT_LT(rel_err(finite_diff_grad(p, i, x, 1e-6), g), 1e-5);
  }
}

TEST(LogisticTest, FullGradientIsClientMean) {
  const LogisticProblem p(synthetic(20, 5, 9), 0.1, 3);
  RngStream rng = seeded_rng(10);
  const DenseVector x = sample_gaussian(rng, 5, 0.0, 1.0);
  DenseVector sum(5);
  for (std::size_t i = 0; i < 3; ++i) sum += p.client_grad(i, x);
  sum *= 1.0 / 3.0;
  EXPECT_LT(norm2(p.grad(x) - sum), 1e-12);
  EXPECT_THROW((void)p.client_grad(3, x), ParameterError);
}

TEST(LogisticTest, ConstantsExamples) {
  const LogisticProblem p(one_row({1.0, 0.0}, 1), 0.1);
  const SmoothnessConstants c = p.constants();
  EXPECT_NEAR(c.L, 0.45, 1e-15);
  EXPECT_NEAR(c.L1, 1.0, 1e-15);
  EXPECT_NEAR(c.L0, 0.2 + 0.1 * std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(c.L0, 0.341421, 1e-6);
  ASSERT_EQ(c.L_hat.size(), 1u);
  EXPECT_NEAR(c.L_hat[0], 0.45, 1e-15);
}

TEST(LogisticTest, ConstantsScaleWithFeatures) {
  Dataset ds = synthetic(15, 4, 11);
  const SmoothnessConstants a = LogisticProblem(ds, 0.1).constants();
  for (auto& row : ds.rows)
    for (auto& f : row) f.value *= 2.0;
  const SmoothnessConstants b = LogisticProblem(ds, 0.1).constants();
  EXPECT_NEAR(b.L1, 2.0 * a.L1, 1e-12);
  EXPECT_NEAR(b.L - 0.2, 4.0 * (a.L - 0.2), 1e-10);
  EXPECT_EQ(LogisticProblem(ds, 0.0).constants().L0, 0.0);
}

TEST(LogisticTest, ConstantsMatchIndependentPowerIteration) {
  const Dataset ds = synthetic(30, 6, 12);
  const LogisticProblem p(ds, 0.1);
  // power iteration on A^T A
  DenseVector v(6, 1.0);
  double lambda_max = 0.0;
  for (int it = 0; it < 2000; ++it) {
    DenseVector w(6);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const DenseVector a = ds.dense_row(i);
      w.axpy(dot(a, v), a);
    }
    lambda_max = norm2(w) / norm2(v);
    v = (1.0 / norm2(w)) * w;
  }
  EXPECT_NEAR(p.constants().L, lambda_max / (4.0 * 30.0) + 0.2, 1e-9);
  double max_row = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) max_row = std::max(max_row, norm2(ds.dense_row(i)));
  EXPECT_NEAR(p.constants().L1, max_row, 1e-12);
  EXPECT_NEAR(p.constants().L_hat[4], squared_norm(ds.dense_row(4)) / 4.0 + 0.2, 1e-10);
}

TEST(LogisticTest, StochasticGradient) {
  const LogisticProblem p(synthetic(20, 4, 13), 0.1, 4);  // shards of 5
  const DenseVector x{0.3, -0.2, 1.0, 0.5};
  RngStream rng = seeded_rng(14);
  EXPECT_EQ(p.stochastic_grad(1, x, {5, 0.0}, rng), p.client_grad(1, x));
  EXPECT_THROW((void)p.stochastic_grad(1, x, {6, 0.0}, rng), ParameterError);

  const int draws = 10000;
  DenseVector mean(4);
  for (int t = 0; t < draws; ++t) mean += p.stochastic_grad(1, x, {2, 0.0}, rng);
  mean *= 1.0 / draws;
  EXPECT_LT(norm2(mean - p.client_grad(1, x)), 0.05);
}

TEST(ShardTest, Examples) {
  auto sizes = [](std::size_t n, std::size_t c) {
    std::vector<std::size_t> out;
    for (const Shard& s : shard(n, c)) out.push_back(s.size());
    return out;
  };
  EXPECT_EQ(sizes(10, 5), (std::vector<std::size_t>{2, 2, 2, 2, 2}));
  EXPECT_EQ(sizes(7, 3), (std::vector<std::size_t>{3, 2, 2}));
  EXPECT_EQ(sizes(9, 1), (std::vector<std::size_t>{9}));
  const auto s = shard(7, 3);
  EXPECT_EQ(s[0].begin, 0u);
  EXPECT_EQ(s[1].begin, 3u);
  EXPECT_EQ(s[2].end, 7u);
  EXPECT_THROW(shard(3, 4), ParameterError);
  EXPECT_THROW(shard(3, 0), ParameterError);
}
