#include <gtest/gtest.h>

#include <random>

#include "gbmbench/metrics.hpp"
#include "oracles.hpp"

using namespace gbm;

namespace {

Plan plan_of(const Mask& m) {
  Plan p;
  p.target = m;
  p.voxel_count = voxel_count(m);
  return p;
}

}  // namespace

TEST(RecurrenceRegion, Definitions) {
  const auto g = oracle::grid(4, 1, 1);
  LabelVolume edema(g, Label::Edema);
  EXPECT_TRUE(is_empty(recurrence_region(edema, RecurrenceDefinition::Enhancing)));
  LabelVolume all(g);
  all.data() = {Label::Necrosis, Label::Edema, Label::Enhancing, Label::Enhancing};
  EXPECT_EQ(voxel_count(recurrence_region(all, RecurrenceDefinition::Full)), 4u);
  EXPECT_EQ(voxel_count(recurrence_region(all, RecurrenceDefinition::Core)), 3u);
  EXPECT_EQ(voxel_count(recurrence_region(all, RecurrenceDefinition::Enhancing)), 2u);
}

TEST(RecurrenceRegion, NestedForRandomLabels) {
  std::mt19937_64 rng(2);
  const auto g = oracle::grid(10, 10, 10);
  LabelVolume v(g);
  for (auto& l : v.data()) l = static_cast<Label>(rng() % 4);
  const auto e = recurrence_region(v, RecurrenceDefinition::Enhancing);
  const auto c = recurrence_region(v, RecurrenceDefinition::Core);
  const auto f = recurrence_region(v, RecurrenceDefinition::Full);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (e[i]) ASSERT_TRUE(c[i]);
    if (c[i]) ASSERT_TRUE(f[i]);
  }
}

TEST(Coverage, BoundsAndErrors) {
  const auto g = oracle::grid(6, 6, 6);
  Mask rec(g);
  rec.at(1, 1, 1) = rec.at(2, 2, 2) = 1;
  EXPECT_EQ(coverage(plan_of(Mask(g, 1)), rec), 1.0);
  EXPECT_EQ(coverage(plan_of(Mask(g)), rec), 0.0);
  EXPECT_THROW(coverage(plan_of(Mask(g, 1)), Mask(g)), EmptyRegionError);
  EXPECT_THROW(coverage(plan_of(Mask(oracle::grid(6, 6, 5))), rec), ContractError);
}

TEST(Coverage, MatchesDirectRecount) {
  std::mt19937_64 rng(3);
  const auto g = oracle::grid(16, 16, 16);
  for (int trial = 0; trial < 20; ++trial) {
    const Mask plan = oracle::random_mask(rng, g, 0.5);
    const Mask rec = oracle::random_mask(rng, g, 0.1);
    std::size_t both = 0, total = 0;
    for (std::size_t z = 0; z < 16; ++z)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
          if (rec.at(x, y, z)) {
            ++total;
            both += plan.at(x, y, z) ? 1 : 0;
          }
    ASSERT_EQ(coverage(plan_of(plan), rec), double(both) / double(total));
  }
}

TEST(Coverage, GrowthOutsidePlanDecreases) {
  std::mt19937_64 rng(4);
  const auto g = oracle::grid(12, 12, 12);
  for (int trial = 0; trial < 20; ++trial) {
    const Mask plan = oracle::random_mask(rng, g, 0.5);
    Mask rec = oracle::random_mask(rng, g, 0.1);
    const double before = coverage(plan_of(plan), rec);
    const double old_n = double(voxel_count(rec));
    Mask grown_out = rec, grown_in = rec;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!rec[i] && !plan[i] && rng() % 5 == 0) grown_out[i] = 1;
      if (!rec[i] && plan[i] && rng() % 5 == 0) grown_in[i] = 1;
    }
    if (voxel_count(grown_out) > old_n && before > 0) EXPECT_LT(coverage(plan_of(plan), grown_out), before);
    EXPECT_GE(coverage(plan_of(plan), grown_in), before * old_n / double(voxel_count(grown_in)) - 1e-15);
  }
}

TEST(ComDistance, Cases) {
  const auto g = oracle::grid(30, 5, 5);
  Mask a(g), b(g);
  a.at(2, 2, 2) = 1;
  b.at(22, 2, 2) = 1;
  EXPECT_DOUBLE_EQ(com_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(com_distance(a, b), 2.0);
  EXPECT_THROW(com_distance(a, Mask(g)), EmptyRegionError);
}

TEST(SubjectMetrics, HandBuiltPhantom) {
  // 8x8x8 grid, 2 mm voxels.
  const auto g = oracle::grid(8, 8, 8, {2, 2, 2});
  LabelVolume preop(g), follow(g);
  preop.at(2, 2, 2) = Label::Enhancing;
  preop.at(3, 2, 2) = Label::Necrosis;
  preop.at(4, 2, 2) = Label::Edema;
  follow.at(2, 5, 2) = Label::Enhancing;
  follow.at(3, 5, 2) = Label::Enhancing;
  follow.at(2, 6, 2) = Label::Necrosis;
  follow.at(6, 6, 6) = Label::Edema;
  follow.at(7, 7, 7) = Label::Edema;

  Mask half(g);
  half.at(2, 5, 2) = 1;  // one enhancing voxel
  half.at(6, 6, 6) = 1;  // one edema voxel
  const std::vector<NamedPlan> plans{{kStandardModel, plan_of(Mask(g, 1))}, {"m", plan_of(half)}};
  const auto sm = subject_metrics("S1", "D", preop, follow, plans);
  EXPECT_EQ(sm.scores.size(), 6u);
  for (auto def : kAllRecurrenceDefinitions) EXPECT_EQ(*sm.coverage_of(kStandardModel, def), 1.0);
  EXPECT_DOUBLE_EQ(*sm.coverage_of("m", RecurrenceDefinition::Enhancing), 0.5);
  EXPECT_DOUBLE_EQ(*sm.coverage_of("m", RecurrenceDefinition::Core), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*sm.coverage_of("m", RecurrenceDefinition::Full), 2.0 / 5.0);
  // 2 core voxels of 8 mm^3; 2 enhancing voxels
  EXPECT_DOUBLE_EQ(sm.preop_core_cm3, 0.016);
  EXPECT_DOUBLE_EQ(sm.recurrence_enh_cm3, 0.016);
  // preop core COM (2.5,2,2) idx; recurrence core COM (7/3, 16/3, 2) idx
  const double dx = (2.5 - 7.0 / 3.0) * 2, dy = (2.0 - 16.0 / 3.0) * 2;
  EXPECT_NEAR(sm.com_distance_cm, std::sqrt(dx * dx + dy * dy) / 10.0, 1e-12);
  EXPECT_FALSE(sm.multifocal);
}

TEST(SubjectMetrics, FullEqualsCoreWithoutEdema) {
  std::mt19937_64 rng(8);
  const auto g = oracle::grid(10, 10, 10);
  LabelVolume preop(g), follow(g);
  preop.at(1, 1, 1) = Label::Enhancing;
  for (auto& l : follow.data()) {
    const auto r = rng() % 6;
    l = r == 0 ? Label::Enhancing : (r == 1 ? Label::Necrosis : Label::Background);
  }
  const auto sm = subject_metrics("S", "D", preop, follow, {{"m", plan_of(oracle::random_mask(rng, g, 0.5))}});
  EXPECT_EQ(*sm.coverage_of("m", RecurrenceDefinition::Full), *sm.coverage_of("m", RecurrenceDefinition::Core));
  EXPECT_TRUE(sm.multifocal);
}

TEST(SubjectMetrics, RejectsMissingEnhancingRecurrence) {
  const auto g = oracle::grid(4, 4, 4);
  LabelVolume preop(g), follow(g, Label::Edema);
  preop.at(1, 1, 1) = Label::Enhancing;
  EXPECT_THROW(subject_metrics("S", "D", preop, follow, {}), EmptyRegionError);
}
