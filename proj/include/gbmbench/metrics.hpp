#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gbmbench/errors.hpp"
#include "gbmbench/morphology.hpp"
#include "gbmbench/plans.hpp"
#include "gbmbench/volume.hpp"

namespace gbm {

/// Which follow-up labels count as recurrence.
enum class RecurrenceDefinition { Enhancing, Core, Full };

inline constexpr std::array<RecurrenceDefinition, 3> kAllRecurrenceDefinitions{
    RecurrenceDefinition::Enhancing, RecurrenceDefinition::Core, RecurrenceDefinition::Full};

inline const char* to_string(RecurrenceDefinition d) noexcept {
  switch (d) {
    case RecurrenceDefinition::Enhancing: return "enhancing";
    case RecurrenceDefinition::Core: return "core";
    case RecurrenceDefinition::Full: return "full";
  }
  return "?";
}

inline std::optional<RecurrenceDefinition> parse_recurrence_definition(std::string_view s) noexcept {
  for (auto d : kAllRecurrenceDefinitions)
    if (s == to_string(d)) return d;
  return std::nullopt;
}

inline Mask recurrence_region(const LabelVolume& followup, RecurrenceDefinition def) {
  switch (def) {
    case RecurrenceDefinition::Enhancing: return labels_mask(followup, {Label::Enhancing});
    case RecurrenceDefinition::Core: return labels_mask(followup, {Label::Necrosis, Label::Enhancing});
    case RecurrenceDefinition::Full: return labels_mask(followup, {Label::Necrosis, Label::Edema, Label::Enhancing});
  }
  throw ContractError("unknown recurrence definition");
}

inline Mask tumor_core(const LabelVolume& seg) { return labels_mask(seg, {Label::Necrosis, Label::Enhancing}); }

/// Fraction of recurrence voxels inside the target.
inline double coverage(const Mask& target, const Mask& recurrence) {
  require_compatible(target.meta(), recurrence.meta(), "coverage");
  std::size_t inside = 0, total = 0;
  for (std::size_t i = 0; i < recurrence.size(); ++i) {
    if (!recurrence[i]) continue;
    ++total;
    if (target[i]) ++inside;
  }
  if (total == 0) throw EmptyRegionError("coverage of an empty recurrence");
  return static_cast<double>(inside) / static_cast<double>(total);
}

inline double coverage(const Plan& plan, const Mask& recurrence) { return coverage(plan.target, recurrence); }

/// Distance in cm between the centers of mass of two regions.
inline double com_distance(const Mask& preop_core, const Mask& recurrence_core) {
  require_compatible(preop_core.meta(), recurrence_core.meta(), "com_distance");
  return distance_mm(center_of_mass(preop_core), center_of_mass(recurrence_core)) / 10.0;
}

inline constexpr const char* kStandardModel = "standard";

/// A plan under evaluation, keyed by the model that produced it
/// ("standard" for the margin plan).
struct NamedPlan {
  std::string model;
  Plan plan;
};

struct PlanScore {
  std::string model;
  RecurrenceDefinition definition = RecurrenceDefinition::Enhancing;
  double coverage = 0.0;
  bool under_volumed = false;
};

struct SubjectMetrics {
  std::string subject;
  std::string dataset;
  std::vector<PlanScore> scores;
  double preop_core_cm3 = 0.0;
  double recurrence_enh_cm3 = 0.0;
  double com_distance_cm = 0.0;
  bool multifocal = false;

  std::optional<double> coverage_of(std::string_view model, RecurrenceDefinition def) const {
    for (const auto& s : scores)
      if (s.model == model && s.definition == def) return s.coverage;
    return std::nullopt;
  }
};

/// Scores every plan against every requested recurrence definition and
/// records the cohort-exploration geometry. Multifocal means the recurrence
/// core has more than one 26-connected component.
inline SubjectMetrics subject_metrics(const std::string& subject, const std::string& dataset,
                                      const LabelVolume& preop, const LabelVolume& followup,
                                      const std::vector<NamedPlan>& plans,
                                      const std::vector<RecurrenceDefinition>& defs = {
                                          kAllRecurrenceDefinitions.begin(), kAllRecurrenceDefinitions.end()}) {
  require_compatible(preop.meta(), followup.meta(), "subject_metrics preop/followup");
  const Mask enhancing = recurrence_region(followup, RecurrenceDefinition::Enhancing);
  if (is_empty(enhancing)) throw EmptyRegionError("follow-up has no enhancing recurrence");
  const Mask preop_core = tumor_core(preop);
  if (is_empty(preop_core)) throw EmptyRegionError("preoperative tumor core is empty");
  const Mask rec_core = recurrence_region(followup, RecurrenceDefinition::Core);

  SubjectMetrics out;
  out.subject = subject;
  out.dataset = dataset;
  out.preop_core_cm3 = volume_cm3(preop_core);
  out.recurrence_enh_cm3 = volume_cm3(enhancing);
  out.com_distance_cm = com_distance(preop_core, rec_core);
  out.multifocal = count_components(rec_core) > 1;

  for (auto def : defs) {
    const Mask rec = recurrence_region(followup, def);
    for (const auto& np : plans) {
      require_compatible(np.plan.target.meta(), followup.meta(), "subject_metrics plan/followup");
      out.scores.push_back({np.model, def, coverage(np.plan, rec), np.plan.under_volumed});
    }
  }
  return out;
}

}  // namespace gbm
