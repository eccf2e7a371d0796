#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gbmbench/harness.hpp"
#include "gbmbench/phantom.hpp"

using namespace gbm;
namespace fs = std::filesystem;

namespace {

// Same physical brain as the default at a quarter of the voxels.
PhantomConfig small_config() {
  PhantomConfig c;
  c.shape = {32, 32, 32};
  c.spacing = {4.0, 4.0, 4.0};
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gbmbench_phantom_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Phantom, Deterministic) {
  const auto cfg = small_config();
  const auto a = generate_phantom_subject(cfg, 3), b = generate_phantom_subject(cfg, 3);
  EXPECT_EQ(a.id, "PHANTOM-0004");
  EXPECT_TRUE(a.preop == b.preop);
  EXPECT_TRUE(a.followup == b.followup);
  EXPECT_TRUE(a.truth_cellmap == b.truth_cellmap);
  EXPECT_EQ(a.truth_params.d_w, b.truth_params.d_w);
  EXPECT_EQ(a.truth_params.rho, b.truth_params.rho);
}

TEST(Phantom, StreamsIndependentOfCohortSize) {
  // subject i depends only on (seed, i)
  const auto cfg = small_config();
  const auto a = generate_phantom_subject(cfg, 1);
  auto other = cfg;
  other.seed = cfg.seed + 1;
  const auto c = generate_phantom_subject(other, 1);
  EXPECT_NE(a.truth_params.d_w, c.truth_params.d_w);
  EXPECT_TRUE(a.preop == generate_phantom_subject(cfg, 1).preop);
}

TEST(Phantom, TissueAndLabelsWellFormed) {
  const auto cfg = small_config();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto s = generate_phantom_subject(cfg, i);
    EXPECT_NO_THROW(s.tissue.validate());
    for (std::size_t v = 0; v < s.tissue.wm.size(); ++v)
      ASSERT_LE(s.tissue.wm[v] + s.tissue.gm[v] + s.tissue.csf[v], 1.0);
    EXPECT_GT(voxel_count(labels_mask(s.preop, {Label::Enhancing})), 0u);
    const Mask rec = labels_mask(s.followup, {Label::Necrosis, Label::Enhancing});
    ASSERT_FALSE(is_empty(rec));
    // recurrence center of mass lies in the brain
    const WorldPoint com = center_of_mass(rec);
    const auto& g = s.brain.meta();
    std::array<std::size_t, 3> k{};
    const double w[3] = {com.x, com.y, com.z};
    for (int a = 0; a < 3; ++a) k[a] = static_cast<std::size_t>(std::lround((w[a] - g.origin[a]) / g.spacing[a]));
    EXPECT_TRUE(s.brain.at(k[0], k[1], k[2]));
    // every tumor label sits inside the brain
    for (std::size_t v = 0; v < s.brain.size(); ++v)
      if (s.followup[v] != Label::Background) ASSERT_TRUE(s.brain[v]);
    EXPECT_GE(s.truth_params.d_w, cfg.d_w_range[0]);
    EXPECT_LE(s.truth_params.d_w, cfg.d_w_range[1]);
    EXPECT_GE(s.truth_params.rho, cfg.rho_range[0]);
    EXPECT_LE(s.truth_params.rho, cfg.rho_range[1]);
  }
}

TEST(Phantom, ConfigJsonRoundTripAndValidation) {
  PhantomConfig c = small_config();
  c.seed = 7;
  c.dataset = "SYN";
  const nlohmann::json j = c;
  const PhantomConfig back = j.get<PhantomConfig>();
  EXPECT_EQ(nlohmann::json(back), j);

  const PhantomConfig partial = nlohmann::json{{"seed", 9}}.get<PhantomConfig>();
  EXPECT_EQ(partial.seed, 9u);
  EXPECT_EQ(partial.shape, PhantomConfig{}.shape);
  EXPECT_THROW(nlohmann::json({{"sede", 9}}).get<PhantomConfig>(), ValidationError);

  PhantomConfig bad = c;
  bad.t2 = bad.t1 + 30.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = c;
  bad.theta_edema = 0.9;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Phantom, CohortRoundTripThroughManifest) {
  const fs::path dir = scratch("cohort");
  const fs::path manifest = generate_cohort(small_config(), 3, dir);
  const Manifest m = load_manifest(manifest);
  ASSERT_EQ(m.subjects.size(), 3u);
  EXPECT_EQ(m.dataset, "PHANTOM");
  const auto s0 = generate_phantom_subject(small_config(), 0);
  EXPECT_TRUE(read_labels(m.subjects[0].preop) == s0.preop);
  EXPECT_TRUE(read_labels(m.subjects[0].followup) == s0.followup);
  EXPECT_TRUE(read_mask(m.subjects[0].brain_mask) == s0.brain);
  // cell maps are stored as float32
  const ScalarVolume c = read_scalar(m.subjects[0].cellmaps.at(kTruthModel));
  for (std::size_t i = 0; i < c.size(); ++i)
    ASSERT_EQ(c[i], static_cast<double>(static_cast<float>(s0.truth_cellmap.density()[i])));

  std::ifstream f(dir / "phantom_truth.json");
  const auto truth = nlohmann::json::parse(f);
  EXPECT_EQ(truth.at("subjects").at("PHANTOM-0001").at("d_w").get<double>(), s0.truth_params.d_w);
  fs::remove_all(dir);
}

TEST(Phantom, MissingFileIsReportedByPath) {
  const fs::path dir = scratch("missing");
  const fs::path manifest = generate_cohort(small_config(), 2, dir);
  const fs::path gone = dir / "PHANTOM-0002" / "tissue_gm.nii.gz";
  const fs::path gone2 = dir / "PHANTOM-0001" / "followup_seg.nii.gz";
  fs::remove(gone);
  fs::remove(gone2);
  try {
    load_manifest(manifest);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.missing().size(), 2u);
    EXPECT_EQ(fs::path(e.missing()[0]), gone2);
    EXPECT_EQ(fs::path(e.missing()[1]), gone);
  }
  fs::remove_all(dir);
}
