#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gbmbench/errors.hpp"
#include "gbmbench/growth_fk.hpp"
#include "gbmbench/morphology.hpp"
#include "gbmbench/volume.hpp"

namespace gbm {

inline constexpr double kDefaultMarginMm = 15.0;

enum class PlanSource { StandardMargin, ModelThreshold };

inline const char* to_string(PlanSource s) noexcept {
  return s == PlanSource::StandardMargin ? "standard_margin" : "model_threshold";
}

/// Radiation target volume with its provenance.
struct Plan {
  Mask target;
  PlanSource source = PlanSource::StandardMargin;
  std::optional<double> margin_mm;
  std::optional<double> threshold;
  std::size_t voxel_count = 0;
  double volume_cm3 = 0.0;
  /// Model plan could not reach the requested volume from positive voxels.
  bool under_volumed = false;
};

/// Clinical plan: the core dilated by `margin_mm`, restricted to the brain.
inline Plan standard_plan(const Mask& core, const Mask& brain, double margin_mm = kDefaultMarginMm) {
  require_compatible(core.meta(), brain.meta(), "standard_plan");
  if (is_empty(core)) throw EmptyRegionError("standard plan needs a nonempty tumor core");
  Plan p;
  p.target = dilate_mm(core, margin_mm, brain);
  p.source = PlanSource::StandardMargin;
  p.margin_mm = margin_mm;
  p.voxel_count = gbm::voxel_count(p.target);
  p.volume_cm3 = gbm::volume_cm3(p.target);
  return p;
}

/// Model plan: the `target_voxels` in-brain voxels of highest concentration,
/// ties broken by ascending linear index. Only voxels with c > 0 qualify; a
/// shortfall is flagged, never padded. The recorded threshold is the
/// concentration of the last voxel selected.
inline Plan model_plan(const CellMap& cellmap, const Mask& brain, std::size_t target_voxels) {
  require_compatible(cellmap.meta(), brain.meta(), "model_plan");
  if (target_voxels < 1) throw ContractError("model plan needs target_voxels >= 1");
  const auto& c = cellmap.density();

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (brain[i] && c[i] > 0.0) candidates.push_back(i);
  if (candidates.empty()) throw DegenerateError("cell map is zero everywhere inside the brain mask");

  const std::size_t k = std::min(target_voxels, candidates.size());
  auto ranks_before = [&c](std::size_t a, std::size_t b) {
    if (c[a] != c[b]) return c[a] > c[b];
    return a < b;
  };
  // The comparator is a strict total order, so the selected set does not
  // depend on how nth_element partitions.
  std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k - 1), candidates.end(),
                   ranks_before);
  const std::size_t kth = candidates[k - 1];

  Plan p;
  p.target = Mask(c.meta());
  for (std::size_t j = 0; j < k; ++j) p.target[candidates[j]] = 1;
  p.source = PlanSource::ModelThreshold;
  p.threshold = c[kth];
  p.voxel_count = k;
  p.volume_cm3 = gbm::volume_cm3(p.target);
  p.under_volumed = k < target_voxels;
  return p;
}

struct PlanPair {
  Plan standard;
  Plan model;
};

/// Standard plan plus the model plan iso-volumetric to it.
inline PlanPair plan_pair(const Mask& core, const Mask& brain, const CellMap& cellmap,
                          double margin_mm = kDefaultMarginMm) {
  PlanPair out;
  out.standard = standard_plan(core, brain, margin_mm);
  out.model = model_plan(cellmap, brain, out.standard.voxel_count);
  return out;
}

}  // namespace gbm
