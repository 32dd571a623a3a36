#include "retree/rng.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

namespace retree {
namespace {

TEST(Rng, SameSeedSameSequence) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a(1);
  Rng b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  EXPECT_LT(same, 4);
}

TEST(Rng, DoublesInRange) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.next_double();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = rng.next_open();
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Rng, NextBelowCoversRange) {
  Rng rng(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.next_below(5)];
  for (const int c : counts) {
    EXPECT_GT(c, 9000);
    EXPECT_LT(c, 11000);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum_sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sum_sq / n, 1.0, 0.02);
}

TEST(Rng, GammaMoments) {
  // Gamma(shape, 1): mean = shape, variance = shape.
  for (const double shape : {0.5, 1.0, 2.5, 9.0}) {
    Rng rng(13);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = rng.gamma(shape);
      ASSERT_GT(x, 0.0);
      sum += x;
      sum_sq += x * x;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    EXPECT_NEAR(mean, shape, 0.05 * shape + 0.01) << "shape " << shape;
    EXPECT_NEAR(var, shape, 0.08 * shape + 0.02) << "shape " << shape;
  }
}

TEST(Rng, BetaMomentsAndSupport) {
  // Beta(a, b): mean = a/(a+b).
  struct Case {
    double a, b;
  };
  for (const auto [a, b] : {Case{4, 1}, Case{1, 4}, Case{2.5, 4.5}, Case{0.5, 0.5}}) {
    Rng rng(17);
    const int n = 100000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = rng.beta(a, b);
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 1.0);
      sum += x;
    }
    EXPECT_NEAR(sum / n, a / (a + b), 0.01) << "Beta(" << a << "," << b << ")";
  }
}

TEST(DeriveSeed, StableAndNameSensitive) {
  EXPECT_EQ(derive_seed(7, "toy-0001"), derive_seed(7, "toy-0001"));
  EXPECT_NE(derive_seed(7, "toy-0001"), derive_seed(7, "toy-0002"));
  EXPECT_NE(derive_seed(7, "toy-0001"), derive_seed(8, "toy-0001"));
}

}  // namespace
}  // namespace retree
