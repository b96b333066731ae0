#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "doda/rng.hpp"

using doda::derive_seed;
using doda::Rng;

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, "noise"), derive_seed(7, "noise"));
  EXPECT_NE(derive_seed(7, "noise"), derive_seed(7, "mask"));
  EXPECT_NE(derive_seed(7, "noise", 0), derive_seed(7, "noise", 1));
  EXPECT_NE(derive_seed(7, "noise"), derive_seed(8, "noise"));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformStaysInRange) {
  Rng rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = rng.uniform(-0.1, 0.1);
    ASSERT_GE(v, -0.1);
    ASSERT_LT(v, 0.1);
  }
}

TEST(Rng, UniformIndexCoversRange) {
  Rng rng(5);
  std::array<int, 7> counts{};
  for (int i = 0; i < 70000; ++i) {
    const auto k = rng.uniform_index(7);
    ASSERT_LT(k, 7u);
    ++counts[k];
  }
  for (int c : counts) EXPECT_NEAR(c / 70000.0, 1.0 / 7.0, 0.01);
}

TEST(Rng, CategoricalMatchesProbabilities) {
  Rng rng(11);
  const std::vector<double> p = {0.2, 0.5, 0.3};
  std::array<int, 3> counts{};
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++counts[rng.categorical(p)];
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(counts[k] / double(n), p[k], 0.005);
}

TEST(Rng, CategoricalPointMassIsExact) {
  Rng rng(1);
  const std::vector<double> p = {0.0, 0.0, 1.0};
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(rng.categorical(p), 2u);
}
