// Synthetic cohorts: ellipsoidal brains, FK-grown tumors, resection and regrowth.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbmbench/errors.hpp"
#include "gbmbench/growth_fk.hpp"
#include "gbmbench/morphology.hpp"
#include "gbmbench/volume.hpp"
#include "gbmbench/volume_io.hpp"

namespace gbm {

struct PhantomConfig {
  std::array<std::size_t, 3> shape{64, 64, 64};
  std::array<double, 3> spacing{2.0, 2.0, 2.0};
  std::array<double, 3> brain_semi_axes_mm{56.0, 60.0, 50.0};
  std::array<double, 3> ventricle_semi_axes_mm{9.0, 20.0, 8.0};
  double gm_shell_fraction = 0.15;
  std::array<double, 2> d_w_range{0.05, 0.25};
  std::array<double, 2> rho_range{0.08, 0.12};
  double gm_ratio = 0.1;
  double seed_width_mm = 1.5;
  double t1 = 100.0;
  double t2 = 190.0;
  double theta_enh = 0.8;
  double theta_edema = 0.16;
  double necrosis_fraction = 0.3;
  bool resection = true;
  std::string dataset = "PHANTOM";
  std::uint64_t seed = 42;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (shape[a] == 0) throw ValidationError("phantom shape must be positive");
      if (!(spacing[a] > 0.0)) throw ValidationError("phantom spacing must be positive");
      if (!(brain_semi_axes_mm[a] > 0.0)) throw ValidationError("brain semi-axes must be positive");
      if (!(ventricle_semi_axes_mm[a] >= 0.0 && ventricle_semi_axes_mm[a] < brain_semi_axes_mm[a]))
        throw ValidationError("ventricle semi-axes must lie inside the brain");
    }
    if (!(gm_shell_fraction > 0.0 && gm_shell_fraction < 1.0))
      throw ValidationError("gm_shell_fraction must lie in (0,1)");
    if (!(d_w_range[0] > 0.0 && d_w_range[0] <= d_w_range[1])) throw ValidationError("d_w_range invalid");
    if (!(rho_range[0] > 0.0 && rho_range[0] <= rho_range[1])) throw ValidationError("rho_range invalid");
    if (!(gm_ratio >= 0.0 && gm_ratio <= 1.0)) throw ValidationError("gm_ratio must lie in [0,1]");
    if (!(seed_width_mm > 0.0)) throw ValidationError("seed_width_mm must be positive");
    if (!(t1 > 0.0 && t2 > t1)) throw ValidationError("need 0 < t1 < t2");
    if (t2 - t1 < 84.0) throw ValidationError("t2 - t1 must be at least 84 days");
    if (!(theta_edema > 0.0 && theta_edema < theta_enh && theta_enh < 1.0))
      throw ValidationError("need 0 < theta_edema < theta_enh < 1");
    if (!(necrosis_fraction >= 0.0 && necrosis_fraction < 1.0))
      throw ValidationError("necrosis_fraction must lie in [0,1)");
    // also the subject id prefix and directory name
    if (dataset.empty() || dataset.find_first_not_of("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_.-") !=
                               std::string::npos)
      throw ValidationError("dataset name must be nonempty and use only [A-Za-z0-9_.-]");
  }

  GridMeta grid() const { return GridMeta{shape, spacing, {0.0, 0.0, 0.0}, std::nullopt}; }
};

inline void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = nlohmann::json{{"shape", c.shape},
                     {"spacing", c.spacing},
                     {"brain_semi_axes_mm", c.brain_semi_axes_mm},
                     {"ventricle_semi_axes_mm", c.ventricle_semi_axes_mm},
                     {"gm_shell_fraction", c.gm_shell_fraction},
                     {"d_w_range", c.d_w_range},
                     {"rho_range", c.rho_range},
                     {"gm_ratio", c.gm_ratio},
                     {"seed_width_mm", c.seed_width_mm},
                     {"t1", c.t1},
                     {"t2", c.t2},
                     {"theta_enh", c.theta_enh},
                     {"theta_edema", c.theta_edema},
                     {"necrosis_fraction", c.necrosis_fraction},
                     {"resection", c.resection},
                     {"dataset", c.dataset},
                     {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, PhantomConfig& c) {
  if (!j.is_object()) throw ValidationError("phantom config must be a JSON object");
  nlohmann::json defaults = PhantomConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ValidationError("unknown phantom config key: " + key);
    defaults[key] = value;
  }
  try {
    defaults.at("shape").get_to(c.shape);
    defaults.at("spacing").get_to(c.spacing);
    defaults.at("brain_semi_axes_mm").get_to(c.brain_semi_axes_mm);
    defaults.at("ventricle_semi_axes_mm").get_to(c.ventricle_semi_axes_mm);
    defaults.at("gm_shell_fraction").get_to(c.gm_shell_fraction);
    defaults.at("d_w_range").get_to(c.d_w_range);
    defaults.at("rho_range").get_to(c.rho_range);
    defaults.at("gm_ratio").get_to(c.gm_ratio);
    defaults.at("seed_width_mm").get_to(c.seed_width_mm);
    defaults.at("t1").get_to(c.t1);
    defaults.at("t2").get_to(c.t2);
    defaults.at("theta_enh").get_to(c.theta_enh);
    defaults.at("theta_edema").get_to(c.theta_edema);
    defaults.at("necrosis_fraction").get_to(c.necrosis_fraction);
    defaults.at("resection").get_to(c.resection);
    defaults.at("dataset").get_to(c.dataset);
    defaults.at("seed").get_to(c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("phantom config: ") + e.what());
  }
}

struct PhantomSubject {
  std::string id;
  TissueMaps tissue;
  Mask brain;
  LabelVolume preop;
  LabelVolume followup;
  CellMap truth_cellmap;  // at t1, before resection
  GrowthParams truth_params;
};

namespace phantom_detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Purpose : std::uint64_t { Params = 1, Seed = 2 };

// Independent stream per (seed, subject, purpose, attempt).
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, Purpose purpose, std::uint64_t attempt) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ index);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ attempt);
  return std::mt19937_64(h);
}

// Portable uniform in [0,1): the standard distributions are not specified
// bit-for-bit across library implementations.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double ellipsoid_radius(const WorldPoint& p, const WorldPoint& c, const std::array<double, 3>& axes) {
  const double x = (p.x - c.x) / axes[0], y = (p.y - c.y) / axes[1], z = (p.z - c.z) / axes[2];
  return std::sqrt(x * x + y * y + z * z);
}

inline WorldPoint grid_center(const GridMeta& g) {
  return {g.origin[0] + 0.5 * static_cast<double>(g.shape[0] - 1) * g.spacing[0],
          g.origin[1] + 0.5 * static_cast<double>(g.shape[1] - 1) * g.spacing[1],
          g.origin[2] + 0.5 * static_cast<double>(g.shape[2] - 1) * g.spacing[2]};
}

}  // namespace phantom_detail

/// Hard-partitioned tissue: CSF ventricles, gray-matter shell, white matter.
inline TissueMaps phantom_tissue(const PhantomConfig& cfg) {
  const GridMeta g = cfg.grid();
  const WorldPoint c = phantom_detail::grid_center(g);
  TissueMaps t{ScalarVolume(g), ScalarVolume(g), ScalarVolume(g)};
  const bool has_ventricles =
      cfg.ventricle_semi_axes_mm[0] > 0 && cfg.ventricle_semi_axes_mm[1] > 0 && cfg.ventricle_semi_axes_mm[2] > 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto k = g.coords(i);
    const WorldPoint p = voxel_center(g, k[0], k[1], k[2]);
    const double r = phantom_detail::ellipsoid_radius(p, c, cfg.brain_semi_axes_mm);
    if (r > 1.0) continue;
    if (has_ventricles && phantom_detail::ellipsoid_radius(p, c, cfg.ventricle_semi_axes_mm) <= 1.0)
      t.csf[i] = 1.0;
    else if (r > 1.0 - cfg.gm_shell_fraction)
      t.gm[i] = 1.0;
    else
      t.wm[i] = 1.0;
  }
  return t;
}

inline Mask phantom_brain(const TissueMaps& t) {
  Mask m(t.meta());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (t.wm[i] + t.gm[i] + t.csf[i]) > 0.0 ? 1 : 0;
  return m;
}

/// Threshold a cell map into labels: enhancing above theta_enh with its
/// innermost necrosis_fraction of the equivalent-sphere radius relabeled
/// necrosis, edema in [theta_edema, theta_enh).
inline LabelVolume phantom_labels(const CellMap& c, double theta_enh, double theta_edema, double necrosis_fraction) {
  const GridMeta& g = c.meta();
  LabelVolume out(g);
  Mask enh(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = c.density()[i];
    if (v >= theta_enh) {
      out[i] = Label::Enhancing;
      enh[i] = 1;
    } else if (v >= theta_edema) {
      out[i] = Label::Edema;
    }
  }
  if (is_empty(enh) || necrosis_fraction <= 0.0) return out;
  const WorldPoint com = center_of_mass(enh);
  const double radius = std::cbrt(3.0 * static_cast<double>(voxel_count(enh)) * g.voxel_volume_mm3() / (4.0 * std::numbers::pi));
  const double r_nec = necrosis_fraction * radius;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!enh[i]) continue;
    const auto k = g.coords(i);
    if (distance_mm(voxel_center(g, k[0], k[1], k[2]), com) <= r_nec) out[i] = Label::Necrosis;
  }
  return out;
}

/// Deterministic in (cfg.seed, index); subjects never share random streams.
inline PhantomSubject generate_phantom_subject(const PhantomConfig& cfg, std::size_t index) {
  cfg.validate();
  using phantom_detail::Purpose;
  const GridMeta g = cfg.grid();
  PhantomSubject s;
  char num[24];
  std::snprintf(num, sizeof num, "-%04zu", index + 1);
  s.id = cfg.dataset + num;
  s.tissue = phantom_tissue(cfg);
  s.brain = phantom_brain(s.tissue);

  std::vector<std::size_t> wm_voxels;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (s.tissue.wm[i] > 0.0) wm_voxels.push_back(i);
  if (wm_voxels.empty()) throw GenerationError("phantom has no white matter");

  constexpr std::uint64_t kAttempts = 10;
  for (std::uint64_t attempt = 0; attempt < kAttempts; ++attempt) {
    auto prng = phantom_detail::stream(cfg.seed, index, Purpose::Params, attempt);
    auto srng = phantom_detail::stream(cfg.seed, index, Purpose::Seed, attempt);
    GrowthParams p;
    p.d_w = cfg.d_w_range[0] + (cfg.d_w_range[1] - cfg.d_w_range[0]) * phantom_detail::unit(prng);
    p.rho = cfg.rho_range[0] + (cfg.rho_range[1] - cfg.rho_range[0]) * phantom_detail::unit(prng);
    p.t_end = cfg.t1;
    p.gm_ratio = cfg.gm_ratio;
    const std::size_t pick = wm_voxels[static_cast<std::size_t>(phantom_detail::unit(srng) * wm_voxels.size())];
    const auto k = g.coords(pick);
    WorldPoint seed = voxel_center(g, k[0], k[1], k[2]);
    seed.x += (phantom_detail::unit(srng) - 0.5) * g.spacing[0];
    seed.y += (phantom_detail::unit(srng) - 0.5) * g.spacing[1];
    seed.z += (phantom_detail::unit(srng) - 0.5) * g.spacing[2];
    p.seed = seed;

    const ScalarVolume diffusion = build_diffusion_field(s.tissue, p);
    const CellMap c1 = simulate_fk(seed_initial_condition(seed, g, cfg.seed_width_mm), diffusion, p.rho, cfg.t1);
    LabelVolume preop = phantom_labels(c1, cfg.theta_enh, cfg.theta_edema, cfg.necrosis_fraction);
    if (is_empty(labels_mask(preop, {Label::Enhancing}))) continue;

    ScalarVolume after = c1.density();
    if (cfg.resection)
      for (std::size_t i = 0; i < g.size(); ++i)
        if (after[i] >= cfg.theta_enh) after[i] = 0.0;
    if (is_empty(positive_mask(after))) continue;
    const CellMap c2 = simulate_fk(CellMap(std::move(after)), diffusion, p.rho, cfg.t2 - cfg.t1);
    LabelVolume followup = phantom_labels(c2, cfg.theta_enh, cfg.theta_edema, cfg.necrosis_fraction);
    if (is_empty(labels_mask(followup, {Label::Enhancing}))) continue;

    s.preop = std::move(preop);
    s.followup = std::move(followup);
    s.truth_cellmap = c1;
    s.truth_params = p;
    return s;
  }
  throw GenerationError("phantom subject " + s.id + ": no nonempty tumor after 10 attempts");
}

inline constexpr const char* kTruthModel = "truth";

/// Writes subjects under out_dir/<id>/ and a manifest listing them, with the
/// truth cell map registered as external model "truth". Generating parameters
/// go to phantom_truth.json next to the manifest. Returns the manifest path.
inline std::filesystem::path generate_cohort(const PhantomConfig& cfg, std::size_t n,
                                             const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (n < 1) throw ContractError("cohort size must be >= 1");
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  nlohmann::json subjects = nlohmann::json::array();
  nlohmann::json truth = nlohmann::json::object();
  for (std::size_t i = 0; i < n; ++i) {
    const PhantomSubject s = generate_phantom_subject(cfg, i);
    const fs::path dir = out_dir / s.id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_volume(s.tissue.wm, dir / "tissue_wm.nii.gz");
    write_volume(s.tissue.gm, dir / "tissue_gm.nii.gz");
    write_volume(s.tissue.csf, dir / "tissue_csf.nii.gz");
    write_volume(s.brain, dir / "brain_mask.nii.gz");
    write_volume(s.preop, dir / "preop_seg.nii.gz");
    write_volume(s.followup, dir / "followup_seg.nii.gz");
    write_volume(s.truth_cellmap.density(), dir / "cellmap_truth.nii.gz");
    const std::string rel = s.id + "/";
    subjects.push_back({{"id", s.id},
                        {"dataset", cfg.dataset},
                        {"p_wm", rel + "tissue_wm.nii.gz"},
                        {"p_gm", rel + "tissue_gm.nii.gz"},
                        {"p_csf", rel + "tissue_csf.nii.gz"},
                        {"brain_mask", rel + "brain_mask.nii.gz"},
                        {"preop", rel + "preop_seg.nii.gz"},
                        {"followup", rel + "followup_seg.nii.gz"},
                        {"cellmaps", {{kTruthModel, rel + "cellmap_truth.nii.gz"}}}});
    truth[s.id] = {{"d_w", s.truth_params.d_w},
                   {"rho", s.truth_params.rho},
                   {"seed_mm", {s.truth_params.seed.x, s.truth_params.seed.y, s.truth_params.seed.z}},
                   {"t_end", s.truth_params.t_end}};
  }
  auto dump = [](const nlohmann::json& j, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("write failed: " + path.string());
  };
  dump(nlohmann::json{{"config", cfg}, {"subjects", truth}}, out_dir / "phantom_truth.json");
  const fs::path path = out_dir / "manifest.json";
  dump(nlohmann::json{{"schema_version", 1}, {"dataset", cfg.dataset}, {"subjects", subjects}}, path);
  return path;
}

}  // namespace gbm
