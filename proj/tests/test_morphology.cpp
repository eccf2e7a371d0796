#include <gtest/gtest.h>

#include <random>

#include "gbmbench/morphology.hpp"
#include "oracles.hpp"

using namespace gbm;

TEST(DistanceTransform, AxisAlignedAndSpacing) {
  Mask m(oracle::grid(11, 11, 11));
  m.at(5, 5, 5) = 1;
  EXPECT_DOUBLE_EQ(distance_transform(m).at(7, 5, 5), 2.0);
  EXPECT_DOUBLE_EQ(distance_transform(m).at(5, 5, 5), 0.0);

  Mask a(oracle::grid(11, 11, 11, {2, 1, 1}));
  a.at(5, 5, 5) = 1;
  EXPECT_DOUBLE_EQ(distance_transform(a).at(6, 5, 5), 2.0);
}

TEST(DistanceTransform, EmptyMaskSentinelExceedsDiagonal) {
  const Mask m(oracle::grid(6, 7, 8, {1, 2, 3}));
  const auto d = distance_transform(m);
  for (double v : d.data()) EXPECT_GT(v, m.meta().diagonal_mm());
}

TEST(DistanceTransform, MatchesBruteForceOnFullRandom16) {
  std::mt19937_64 rng(11);
  const Mask m = oracle::random_mask(rng, oracle::grid(16, 16, 16), 0.02);
  const auto d = distance_transform(m);
  const auto ref = oracle::brute_force_distance(m);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(d[i], ref[i]) << i;
}

TEST(DistanceTransform, PropertyExactOnRandomAnisotropicGrids) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> dim(1, 14);
  std::uniform_real_distribution<double> sp(0.3, 3.0), dens(0.001, 0.2);
  for (int trial = 0; trial < 40; ++trial) {
    const auto g = oracle::grid(dim(rng), dim(rng), dim(rng), {sp(rng), sp(rng), sp(rng)});
    const Mask m = oracle::random_mask(rng, g, dens(rng));
    if (is_empty(m)) continue;
    const auto d = distance_transform(m);
    const auto ref = oracle::brute_force_distance(m);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(d[i], ref[i], 1e-9) << "trial " << trial;
  }
}

TEST(DistanceTransform, SpacingCovariance) {
  std::mt19937_64 rng(13);
  const auto g = oracle::grid(9, 10, 11, {0.7, 1.1, 1.9});
  const Mask m = oracle::random_mask(rng, g, 0.03);
  auto g2 = g;
  for (auto& s : g2.spacing) s *= 2.0;
  const Mask m2(g2, m.data());
  const auto d = distance_transform(m), d2 = distance_transform(m2);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d2[i], 2.0 * d[i]);

  auto g3 = g;
  for (auto& s : g3.spacing) s *= 1.37;
  const auto d3 = distance_transform(Mask(g3, m.data()));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d3[i], 1.37 * d[i], 1e-12 * (1.0 + d3[i]));
}

TEST(Dilate, SingleVoxelTwoMillimeters) {
  const auto g = oracle::grid(9, 9, 9);
  Mask m(g);
  m.at(4, 4, 4) = 1;
  const Mask all(g, 1);
  EXPECT_EQ(voxel_count(dilate_mm(m, 2.0, all)), 33u);
  EXPECT_EQ(oracle::ball_offsets(2.0, {1, 1, 1}), 33u);
}

TEST(Dilate, MatchesOffsetEnumerationAcrossSpacings) {
  for (auto sp : {std::array<double, 3>{1, 1, 1}, {1, 1, 2}, {0.5, 1, 1.5}, {1.2, 1.2, 1.2}}) {
    for (double r : {1.0, 2.5, 3.3, 5.0}) {
      const auto g = oracle::grid(31, 31, 31, sp);
      Mask m(g);
      m.at(15, 15, 15) = 1;
      EXPECT_EQ(voxel_count(dilate_mm(m, r, Mask(g, 1))), oracle::ball_offsets(r, sp)) << r;
    }
  }
}

TEST(Dilate, IdentityAndAnnihilator) {
  std::mt19937_64 rng(5);
  const auto g = oracle::grid(8, 9, 10);
  const Mask m = oracle::random_mask(rng, g, 0.1);
  EXPECT_EQ(dilate_mm(m, 0.0, Mask(g, 1)), m);
  EXPECT_TRUE(is_empty(dilate_mm(m, 4.0, Mask(g, 0))));
}

TEST(Dilate, ContractErrors) {
  const Mask a(oracle::grid(4, 4, 4)), b(oracle::grid(4, 4, 5));
  EXPECT_THROW(dilate_mm(a, 1.0, b), ContractError);
  EXPECT_THROW(dilate_mm(a, -1.0, a), ContractError);
}

TEST(Dilate, MonotoneAndExtensiveProperty) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> margin(0.0, 6.0), sp(0.5, 2.0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = oracle::grid(12, 11, 10, {sp(rng), sp(rng), sp(rng)});
    const Mask m = oracle::random_mask(rng, g, 0.02);
    const Mask r = oracle::random_mask(rng, g, 0.7);
    double a = margin(rng), b = margin(rng);
    if (a > b) std::swap(a, b);
    const Mask da = dilate_mm(m, a, r), db = dilate_mm(m, b, r);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (da[i]) ASSERT_TRUE(db[i]);
      if (m[i] && r[i]) ASSERT_TRUE(da[i]);
      if (db[i]) ASSERT_TRUE(r[i]);
    }
  }
}

TEST(CenterOfMass, SimpleCases) {
  Mask m(oracle::grid(8, 8, 8));
  m.at(3, 4, 5) = 1;
  EXPECT_EQ(center_of_mass(m), (WorldPoint{3, 4, 5}));
  Mask two(oracle::grid(4, 1, 1));
  two.at(0, 0, 0) = 1;
  two.at(2, 0, 0) = 1;
  EXPECT_EQ(center_of_mass(two), (WorldPoint{1, 0, 0}));
  EXPECT_THROW(center_of_mass(Mask(oracle::grid(3, 3, 3))), EmptyRegionError);
}

TEST(CenterOfMass, MatchesDirectWeightedSum) {
  std::mt19937_64 rng(9);
  const auto g = oracle::grid(13, 7, 9, {0.9, 1.3, 2.2}, {-40, 12.5, 3});
  const Mask m = oracle::random_mask(rng, g, 0.3);
  ScalarVolume w(g);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : w.data()) v = u(rng);
  for (const auto& weights : {ScalarVolume(g, std::vector<double>(m.data().begin(), m.data().end())), w}) {
    double sw = 0, sx = 0, sy = 0, sz = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const auto c = g.coords(i);
      const double px = g.origin[0] + g.spacing[0] * double(c[0]);
      const double py = g.origin[1] + g.spacing[1] * double(c[1]);
      const double pz = g.origin[2] + g.spacing[2] * double(c[2]);
      sw += weights[i];
      sx += weights[i] * px;
      sy += weights[i] * py;
      sz += weights[i] * pz;
    }
    const auto com = center_of_mass(weights);
    EXPECT_NEAR(com.x, sx / sw, 1e-9 * std::abs(sx / sw));
    EXPECT_NEAR(com.y, sy / sw, 1e-9 * std::abs(sy / sw));
    EXPECT_NEAR(com.z, sz / sw, 1e-9 * std::abs(sz / sw));
  }
  const auto mc = center_of_mass(m);
  const auto wc = center_of_mass(ScalarVolume(g, std::vector<double>(m.data().begin(), m.data().end())));
  EXPECT_NEAR(mc.x, wc.x, 1e-12);
}

TEST(VolumeCm3, Arithmetic) {
  Mask m(oracle::grid(10, 10, 10));
  EXPECT_EQ(volume_cm3(m), 0.0);
  std::fill(m.data().begin(), m.data().end(), 1);
  EXPECT_DOUBLE_EQ(volume_cm3(m), 1.0);
  Mask a(oracle::grid(10, 10, 1, {2, 2, 2.5}), 1);
  EXPECT_DOUBLE_EQ(volume_cm3(a), 1.0);
}

TEST(Components, TwentySixConnectivity) {
  Mask m(oracle::grid(6, 6, 6));
  m.at(0, 0, 0) = 1;
  m.at(1, 1, 1) = 1;  // diagonal neighbor joins
  EXPECT_EQ(count_components(m), 1u);
  m.at(4, 4, 4) = 1;
  EXPECT_EQ(count_components(m), 2u);
  EXPECT_EQ(count_components(Mask(oracle::grid(3, 3, 3))), 0u);
}
