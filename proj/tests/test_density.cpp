// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>

#include "fcarac/density.hpp"
#include "fcarac/sampling.hpp"
#include "support/oracles.hpp"

using namespace fcarac;

TEST(GaussianDensity, KOneIsUnitMass) {
  const auto d = gaussian_cycle_density(1);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0], 1.0);
}

TEST(GaussianDensity, KFourShape) {
  const auto d = gaussian_cycle_density(4);
  EXPECT_EQ(d[0], d[3]);
  EXPECT_EQ(d[1], d[2]);
  EXPECT_GT(d[1], d[0]);
  const double sum = d.sum();
  EXPECT_GE(sum, 0.99);
  EXPECT_LE(sum, 1.0);
}

TEST(GaussianDensity, MatchesQuadratureOracle) {
  for (auto rule : {SigmaRule::span, SigmaRule::bins}) {
    for (std::size_t k = 2; k <= 64; ++k) {
      const auto d = gaussian_cycle_density(k, rule);
      const auto q = fcarac::testing::quadrature_density(k, rule);
      const auto e = fcarac::testing::erf_density(k, rule);
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_NEAR(d[i], q[i], 1e-10) << "k=" << k << " i=" << i;
        EXPECT_NEAR(d[i], e[i], 1e-12) << "k=" << k << " i=" << i;
      }
    }
  }
}

TEST(GaussianDensity, SymmetricPositiveUnimodalAndNearlyUnitMass) {
  for (std::size_t k = 2; k <= 64; ++k) {
    const auto d = gaussian_cycle_density(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_EQ(d[i], d[k - 1 - i]);
      EXPECT_GT(d[i], 0.0);
      if (i + 1 <= (k - 1) / 2) {
        EXPECT_LE(d[i], d[i + 1]);
      }
      sum += d[i];
    }
    EXPECT_GE(sum, 0.99) << k;
    EXPECT_LE(sum, 1.0) << k;
  }
}

TEST(CountFromDensity, SumsUnmaskedValuesOnly) {
  DensityMap zero{Array(Shape{5}), std::vector<bool>(5, true)};
  EXPECT_EQ(count_from_density(zero), 0.0);
  DensityMap padded{Array::vector({0.2, 0.3, 0.3, 0.3}), {true, true, false, false}};
  EXPECT_DOUBLE_EQ(count_from_density(padded), 0.5);
}

TEST(CountFromDensity, TiledCyclesRecoverTheCount) {
  const auto g = gaussian_cycle_density(4);
  DensityMap map{Array(Shape{20}), std::vector<bool>(20, true)};
  for (int c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < 4; ++i) map.values[c * 4 + i] = g[i];
  EXPECT_NEAR(count_from_density(map), 5.0, 0.05);
}

TEST(CountFromDensity, IsLinear) {
  DensityMap map{Array::vector({0.1, -0.4, 0.7}), {true, true, true}};
  const double base = count_from_density(map);
  for (auto& v : map.values.data()) v *= 3.5;
  EXPECT_NEAR(count_from_density(map), 3.5 * base, 1e-15);
}

TEST(GtDensity, FirstKFramesCarryTheGaussian) {
  RawSequence seq;
  seq.id = "s";
  seq.frames = Array(Shape{30, 2});
  seq.first_cycle_end = 10;
  seq.count = 3;
  const auto s = sample(seq, 4);
  const auto map = gt_density_for_sequence(seq, s);
  const auto g = gaussian_cycle_density(4);
  ASSERT_EQ(map.length(), s.length());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(map.values[i], g[i]);
  for (std::size_t i = 4; i < map.length(); ++i) EXPECT_EQ(map.values[i], 0.0);

  auto single = seq;
  single.frames = Array(Shape{10, 2});
  single.count = 1;
  EXPECT_EQ(gt_density_for_sequence(single, sample(single, 4)).length(), 4u);

  auto other = s;
  other.source_id = "t";
  EXPECT_THROW(gt_density_for_sequence(seq, other), std::invalid_argument);
}
