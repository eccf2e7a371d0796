// Manifest-driven cohort evaluation: load, model, plan, score, aggregate, report.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gbmbench/errors.hpp"
#include "gbmbench/growth_fk.hpp"
#include "gbmbench/metrics.hpp"
#include "gbmbench/plans.hpp"
#include "gbmbench/stats.hpp"
#include "gbmbench/volume_io.hpp"

namespace gbm {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

inline constexpr int kManifestSchemaVersion = 1;

struct SubjectEntry {
  std::string id;
  std::string dataset;
  fs::path p_wm, p_gm, p_csf, brain_mask, preop, followup;
  std::map<std::string, fs::path> cellmaps;  // external model name -> file
  LabelRemap label_remap;
};

struct Manifest {
  std::string dataset;
  std::vector<SubjectEntry> subjects;
  LabelRemap label_remap;
};

namespace harness_detail {

inline bool valid_model_name(const std::string& s) {
  static const std::regex re("[A-Za-z0-9_.-]+");
  return std::regex_match(s, re) && s != kStandardModel;
}

inline const json& require(const json& obj, const std::string& key, const std::string& ptr) {
  if (!obj.contains(key)) throw ValidationError("required key missing", ptr + "/" + key);
  return obj.at(key);
}

inline std::string require_string(const json& obj, const std::string& key, const std::string& ptr) {
  const json& v = require(obj, key, ptr);
  if (!v.is_string() || v.get<std::string>().empty())
    throw ValidationError("expected a nonempty string", ptr + "/" + key);
  return v.get<std::string>();
}

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& ptr) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw ValidationError("unknown key", ptr + "/" + key);
}

inline LabelRemap parse_remap(const json& j, const std::string& ptr) {
  if (!j.is_object()) throw ValidationError("expected an object", ptr);
  LabelRemap remap;
  std::map<int, std::string> seen;
  for (const auto& [key, value] : j.items()) {
    const std::string here = ptr + "/" + key;
    int from = 0;
    try {
      std::size_t used = 0;
      from = std::stoi(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw ValidationError("remap key must be an integer", here);
    }
    if (!value.is_number_integer()) throw ValidationError("remap target must be an integer", here);
    const int to = value.get<int>();
    if (!is_valid_label(to)) throw ValidationError("remap target must lie in {0,1,2,3}", here);
    if (auto it = seen.find(to); it != seen.end())
      throw ValidationError("remap is not injective: " + it->second + " and " + key + " both map to " +
                                std::to_string(to),
                            here);
    seen.emplace(to, key);
    remap.emplace(from, to);
  }
  return remap;
}

}  // namespace harness_detail

/// Parses and validates a manifest. Relative paths resolve against the
/// manifest's directory. Every missing file is reported, not only the first.
inline Manifest load_manifest(const fs::path& path) {
  using namespace harness_detail;
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open manifest " + path.string(), "", {path.string()});
  json root;
  try {
    root = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what(), "");
  }
  if (!root.is_object()) throw ValidationError("manifest must be a JSON object", "");
  reject_unknown(root, {"schema_version", "dataset", "label_remap", "subjects"}, "");
  const json& version = require(root, "schema_version", "");
  if (!version.is_number_integer() || version.get<int>() != kManifestSchemaVersion)
    throw ValidationError("unsupported schema_version (expected 1)", "/schema_version");

  Manifest m;
  m.dataset = require_string(root, "dataset", "");
  if (root.contains("label_remap")) m.label_remap = parse_remap(root.at("label_remap"), "/label_remap");

  const json& subjects = require(root, "subjects", "");
  if (!subjects.is_array() || subjects.empty()) throw ValidationError("expected a nonempty array", "/subjects");

  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::set<std::string> ids;
  std::vector<std::string> missing;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    const std::string ptr = "/subjects/" + std::to_string(k);
    const json& s = subjects[k];
    if (!s.is_object()) throw ValidationError("expected an object", ptr);
    reject_unknown(s, {"id", "dataset", "p_wm", "p_gm", "p_csf", "brain_mask", "preop", "followup", "cellmaps"}, ptr);
    SubjectEntry e;
    e.id = require_string(s, "id", ptr);
    if (!ids.insert(e.id).second) throw ValidationError("duplicate subject id " + e.id, ptr + "/id");
    e.dataset = s.contains("dataset") ? require_string(s, "dataset", ptr) : m.dataset;
    e.p_wm = resolve(require_string(s, "p_wm", ptr));
    e.p_gm = resolve(require_string(s, "p_gm", ptr));
    e.p_csf = resolve(require_string(s, "p_csf", ptr));
    e.brain_mask = resolve(require_string(s, "brain_mask", ptr));
    e.preop = resolve(require_string(s, "preop", ptr));
    e.followup = resolve(require_string(s, "followup", ptr));
    if (s.contains("cellmaps")) {
      const json& cm = s.at("cellmaps");
      if (!cm.is_object()) throw ValidationError("expected an object", ptr + "/cellmaps");
      for (const auto& [name, value] : cm.items()) {
        if (!valid_model_name(name)) throw ValidationError("invalid model name", ptr + "/cellmaps/" + name);
        if (!value.is_string() || value.get<std::string>().empty())
          throw ValidationError("expected a nonempty string", ptr + "/cellmaps/" + name);
        e.cellmaps.emplace(name, resolve(value.get<std::string>()));
      }
    }
    e.label_remap = m.label_remap;
    for (const fs::path* p : {&e.p_wm, &e.p_gm, &e.p_csf, &e.brain_mask, &e.preop, &e.followup})
      if (!fs::exists(*p)) missing.push_back(p->string());
    for (const auto& [name, p] : e.cellmaps)
      if (!fs::exists(p)) missing.push_back(p.string());
    m.subjects.push_back(std::move(e));
  }
  if (!missing.empty()) {
    std::string msg = "missing files:";
    for (const auto& p : missing) msg += "\n  " + p;
    throw ValidationError(msg, "", missing);
  }
  return m;
}

/// Concatenates cohorts; subject ids must stay unique across all parts.
inline Manifest merge_manifests(const std::vector<Manifest>& parts, const std::string& dataset) {
  if (parts.empty()) throw ContractError("no manifests to merge");
  Manifest out;
  out.dataset = dataset;
  std::set<std::string> ids;
  for (const auto& p : parts)
    for (const auto& s : p.subjects) {
      if (!ids.insert(s.id).second) throw ValidationError("duplicate subject id " + s.id + " across manifests");
      out.subjects.push_back(s);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration

inline constexpr const char* kBuiltinModel = "fk-builtin";
inline constexpr const char* kCombinedCohort = "combined";
inline constexpr const char* kExternalPrefix = "external:";

struct RunConfig {
  double margin_mm = kDefaultMarginMm;
  std::vector<std::string> models{kBuiltinModel};
  std::vector<RecurrenceDefinition> recurrence_defs{kAllRecurrenceDefinitions.begin(), kAllRecurrenceDefinitions.end()};
  WilcoxonOptions stats;
  std::size_t parallelism = 1;
  bool persist = false;
  std::string cohort_name;  // label of the combined row; empty means "combined"
  fs::path output_dir;      // plans and cell maps go here when persist is set
  CalibrationConfig calibration;

  /// Report column name of a model spec ("external:x" -> "x").
  static std::string column(const std::string& spec) {
    if (spec.rfind(kExternalPrefix, 0) == 0) return spec.substr(std::char_traits<char>::length(kExternalPrefix));
    return spec;
  }

  std::vector<std::string> columns() const {
    std::vector<std::string> out;
    for (const auto& m : models) out.push_back(column(m));
    return out;
  }

  void validate() const {
    if (models.empty()) throw ValidationError("at least one model must be selected", "/models");
    std::set<std::string> seen;
    for (std::size_t k = 0; k < models.size(); ++k) {
      const std::string& m = models[k];
      const std::string ptr = "/models/" + std::to_string(k);
      const bool external = m.rfind(kExternalPrefix, 0) == 0;
      if (!external && m != kBuiltinModel)
        throw ValidationError("model must be \"fk-builtin\" or \"external:<name>\"", ptr);
      if (external && (!harness_detail::valid_model_name(column(m)) || column(m) == kBuiltinModel))
        throw ValidationError("invalid external model name", ptr);
      if (!seen.insert(column(m)).second) throw ValidationError("model listed twice", ptr);
    }
    if (recurrence_defs.empty()) throw ValidationError("at least one recurrence definition", "/recurrence_defs");
    if (!(margin_mm >= 0.0) || !std::isfinite(margin_mm)) throw ValidationError("must be finite and >= 0", "/margin_mm");
    if (parallelism < 1) throw ValidationError("must be >= 1", "/parallelism");
    try {
      calibration.validate();
    } catch (const ContractError& e) {
      throw ValidationError(e.what(), "/calibration");
    }
  }
};

inline void to_json(json& j, const CalibrationConfig& c) {
  j = json{{"t_end", c.t_end},
           {"theta_core", c.theta_core},
           {"theta_edema", c.theta_edema},
           {"grid_points", c.grid_points},
           {"d_w_range", {c.d_w_min, c.d_w_max}},
           {"rho_range", {c.rho_min, c.rho_max}},
           {"seed_width_mm", c.seed_width_mm},
           {"gm_ratio", c.gm_ratio},
           {"full_grid_scan", c.full_grid_scan},
           {"search_starts", c.search_starts},
           {"refinement_levels", c.refinement_levels}};
}

inline void to_json(json& j, const RunConfig& c) {
  std::vector<std::string> defs;
  for (auto d : c.recurrence_defs) defs.push_back(to_string(d));
  j = json{{"margin_mm", c.margin_mm},
           {"models", c.models},
           {"recurrence_defs", defs},
           {"alternative", to_string(c.stats.alternative)},
           {"exact_max_n", c.stats.exact_max_n},
           {"parallelism", c.parallelism},
           {"persist", c.persist},
           {"cohort_name", c.cohort_name},
           {"output_dir", c.output_dir.string()},
           {"calibration", c.calibration}};
}

/// Missing keys keep defaults; unknown keys and wrong types are errors with
/// a JSON pointer.
inline RunConfig parse_run_config(const json& j) {
  using harness_detail::reject_unknown;
  if (!j.is_object()) throw ValidationError("run config must be a JSON object", "");
  reject_unknown(j,
                 {"margin_mm", "models", "recurrence_defs", "alternative", "exact_max_n", "parallelism", "persist",
                  "cohort_name", "output_dir", "calibration"},
                 "");
  RunConfig c;
  auto get = [&](const json& obj, const char* key, auto& dst, const std::string& ptr) {
    if (!obj.contains(key)) return;
    try {
      obj.at(key).get_to(dst);
    } catch (const json::exception&) {
      throw ValidationError("wrong type", ptr + "/" + key);
    }
  };
  get(j, "margin_mm", c.margin_mm, "");
  get(j, "models", c.models, "");
  if (j.contains("recurrence_defs")) {
    std::vector<std::string> defs;
    get(j, "recurrence_defs", defs, "");
    c.recurrence_defs.clear();
    for (std::size_t k = 0; k < defs.size(); ++k) {
      const auto d = parse_recurrence_definition(defs[k]);
      if (!d) throw ValidationError("unknown recurrence definition", "/recurrence_defs/" + std::to_string(k));
      c.recurrence_defs.push_back(*d);
    }
  }
  if (j.contains("alternative")) {
    std::string alt;
    get(j, "alternative", alt, "");
    if (alt == "greater")
      c.stats.alternative = Alternative::Greater;
    else if (alt == "two-sided")
      c.stats.alternative = Alternative::TwoSided;
    else
      throw ValidationError("expected \"greater\" or \"two-sided\"", "/alternative");
  }
  get(j, "exact_max_n", c.stats.exact_max_n, "");
  get(j, "parallelism", c.parallelism, "");
  get(j, "persist", c.persist, "");
  get(j, "cohort_name", c.cohort_name, "");
  if (j.contains("output_dir")) {
    std::string dir;
    get(j, "output_dir", dir, "");
    c.output_dir = dir;
  }
  if (j.contains("calibration")) {
    const json& cj = j.at("calibration");
    if (!cj.is_object()) throw ValidationError("expected an object", "/calibration");
    reject_unknown(cj,
                   {"t_end", "theta_core", "theta_edema", "grid_points", "d_w_range", "rho_range", "seed_width_mm",
                    "gm_ratio", "full_grid_scan", "search_starts", "refinement_levels"},
                   "/calibration");
    auto& cc = c.calibration;
    get(cj, "t_end", cc.t_end, "/calibration");
    get(cj, "theta_core", cc.theta_core, "/calibration");
    get(cj, "theta_edema", cc.theta_edema, "/calibration");
    get(cj, "grid_points", cc.grid_points, "/calibration");
    std::array<double, 2> range{};
    if (cj.contains("d_w_range")) {
      get(cj, "d_w_range", range, "/calibration");
      cc.d_w_min = range[0];
      cc.d_w_max = range[1];
    }
    if (cj.contains("rho_range")) {
      get(cj, "rho_range", range, "/calibration");
      cc.rho_min = range[0];
      cc.rho_max = range[1];
    }
    get(cj, "seed_width_mm", cc.seed_width_mm, "/calibration");
    get(cj, "gm_ratio", cc.gm_ratio, "/calibration");
    get(cj, "full_grid_scan", cc.full_grid_scan, "/calibration");
    get(cj, "search_starts", cc.search_starts, "/calibration");
    get(cj, "refinement_levels", cc.refinement_levels, "/calibration");
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open run config " + path.string(), "", {path.string()});
  try {
    return parse_run_config(json::parse(f));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("run config is not valid JSON: ") + e.what(), "");
  }
}

// ---------------------------------------------------------------------------
// Per-subject run

struct SkipRecord {
  std::string subject;
  std::string dataset;
  std::string reason;  // machine-readable code
  std::string detail;
};

struct CalibrationRecord {
  std::string subject;
  double d_w = 0.0;
  double rho = 0.0;
  double objective = 0.0;
  std::size_t simulations = 0;
};

struct SubjectResult {
  std::string subject;
  std::string dataset;
  std::optional<SubjectMetrics> metrics;
  std::optional<SkipRecord> skip;
  std::optional<CalibrationRecord> calibration;
};

namespace harness_detail {

struct Skip {
  std::string reason;
  std::string detail;
};

template <class F>
auto guarded(const char* reason, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Skip&) {
    throw;
  } catch (const NumericalInstabilityError& e) {
    throw Skip{"numerical-instability", e.what()};
  } catch (const std::exception& e) {
    throw Skip{reason, e.what()};
  }
}

}  // namespace harness_detail

/// Runs every configured model on one subject. Failures come back as a skip
/// record with a reason code; nothing is thrown for per-subject problems.
inline SubjectResult run_subject(const SubjectEntry& entry, const RunConfig& cfg) {
  using harness_detail::guarded;
  using harness_detail::Skip;
  SubjectResult res;
  res.subject = entry.id;
  res.dataset = entry.dataset;
  try {
    TissueMaps tissue = guarded("read-error", [&] {
      return TissueMaps{read_scalar(entry.p_wm), read_scalar(entry.p_gm), read_scalar(entry.p_csf)};
    });
    const Mask brain = guarded("read-error", [&] { return read_mask(entry.brain_mask); });
    const LabelVolume preop = guarded("read-error", [&] { return read_labels(entry.preop, entry.label_remap); });
    const LabelVolume followup =
        guarded("read-error", [&] { return read_labels(entry.followup, entry.label_remap); });

    const GridMeta& g = preop.meta();
    for (const GridMeta* other : {&tissue.wm.meta(), &tissue.gm.meta(), &tissue.csf.meta(), &brain.meta(),
                                  &followup.meta()})
      if (!grids_compatible(g, *other)) throw Skip{"grid-incompatible", "input volumes are not on one grid"};
    guarded("invalid-tissue", [&] { tissue.validate(); });

    const Mask core = tumor_core(preop);
    if (is_empty(core)) throw Skip{"empty-preop-core", "preoperative segmentation has no label 1 or 3"};
    if (is_empty(recurrence_region(followup, RecurrenceDefinition::Enhancing)))
      throw Skip{"no-enhancing-recurrence", "follow-up segmentation has no label 3"};

    const Plan standard = guarded("empty-preop-core", [&] { return standard_plan(core, brain, cfg.margin_mm); });
    std::vector<NamedPlan> plans{{kStandardModel, standard}};
    std::vector<std::pair<std::string, CellMap>> cellmaps;

    for (const auto& spec : cfg.models) {
      const std::string column = RunConfig::column(spec);
      CellMap cm;
      if (spec == kBuiltinModel) {
        const auto cal = guarded("calibration-failed", [&] { return calibrate_fk(preop, tissue, cfg.calibration); });
        res.calibration = CalibrationRecord{entry.id, cal.params.d_w, cal.params.rho, cal.objective, cal.simulations};
        cm = cal.cellmap;
      } else {
        const auto it = entry.cellmaps.find(column);
        if (it == entry.cellmaps.end()) throw Skip{"missing-cellmap", "no cell map for model " + column};
        const ScalarVolume v = guarded("read-error", [&] { return read_scalar(it->second); });
        if (!grids_compatible(g, v.meta())) throw Skip{"grid-incompatible", "cell map " + column + " is on another grid"};
        cm = guarded("cellmap-range-violation", [&] { return CellMap(v); });
      }
      const Plan p = guarded("cellmap-degenerate", [&] { return model_plan(cm, brain, standard.voxel_count); });
      plans.push_back({column, p});
      if (cfg.persist && spec == kBuiltinModel) cellmaps.emplace_back(column, std::move(cm));
    }

    res.metrics = guarded("metrics-failed", [&] {
      return subject_metrics(entry.id, entry.dataset, preop, followup, plans, cfg.recurrence_defs);
    });

    if (cfg.persist && !cfg.output_dir.empty()) {
      const fs::path dir = cfg.output_dir / "subjects" / entry.id;
      guarded("write-error", [&] {
        fs::create_directories(dir);
        for (const auto& np : plans) write_volume(np.plan.target, dir / ("plan_" + np.model + ".nii.gz"));
        for (const auto& [name, cm] : cellmaps) write_volume(cm.density(), dir / ("cellmap_" + name + ".nii.gz"));
      });
    }
  } catch (const Skip& s) {
    res.metrics.reset();
    res.skip = SkipRecord{entry.id, entry.dataset, s.reason, s.detail};
  } catch (const std::exception& e) {
    res.metrics.reset();
    res.skip = SkipRecord{entry.id, entry.dataset, "internal-error", e.what()};
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cohort

struct CohortResults {
  std::string cohort_name;
  std::vector<std::string> columns;  // model columns, without "standard"
  std::vector<RecurrenceDefinition> recurrence_defs;
  WilcoxonOptions stats;
  std::vector<SubjectResult> subjects;  // sorted by id
  std::vector<AggregateRow> rows;

  std::vector<SubjectMetrics> scored() const {
    std::vector<SubjectMetrics> out;
    for (const auto& s : subjects)
      if (s.metrics) out.push_back(*s.metrics);
    return out;
  }
  std::vector<SkipRecord> skips() const {
    std::vector<SkipRecord> out;
    for (const auto& s : subjects)
      if (s.skip) out.push_back(*s.skip);
    return out;
  }

  void reaggregate() {
    const auto m = scored();
    if (m.empty()) throw CohortError("no subject survived to aggregation");
    rows = aggregate(m, cohort_name, columns, recurrence_defs, stats);
  }
};

/// Runs subjects on `cfg.parallelism` worker threads, then aggregates after
/// all have finished. Output does not depend on scheduling.
inline CohortResults run_cohort(const Manifest& manifest, const RunConfig& cfg) {
  cfg.validate();
  CohortResults out;
  out.cohort_name = cfg.cohort_name.empty() ? kCombinedCohort : cfg.cohort_name;
  out.columns = cfg.columns();
  out.recurrence_defs = cfg.recurrence_defs;
  out.stats = cfg.stats;

  const std::size_t n = manifest.subjects.size();
  out.subjects.resize(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) out.subjects[i] = run_subject(manifest.subjects[i], cfg);
  };
  const std::size_t width = std::min(cfg.parallelism, std::max<std::size_t>(n, 1));
  if (width <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::sort(out.subjects.begin(), out.subjects.end(),
            [](const SubjectResult& a, const SubjectResult& b) { return a.subject < b.subject; });
  out.reaggregate();
  return out;
}

// ---------------------------------------------------------------------------
// Serialization of results

inline void to_json(json& j, const SubjectMetrics& m) {
  json scores = json::array();
  for (const auto& s : m.scores)
    scores.push_back(
        {{"model", s.model}, {"recurrence_def", to_string(s.definition)}, {"coverage", s.coverage}, {"under_volumed", s.under_volumed}});
  j = json{{"subject", m.subject},
           {"dataset", m.dataset},
           {"preop_core_cm3", m.preop_core_cm3},
           {"recurrence_enh_cm3", m.recurrence_enh_cm3},
           {"com_distance_cm", m.com_distance_cm},
           {"multifocal", m.multifocal},
           {"scores", scores}};
}

inline void from_json(const json& j, SubjectMetrics& m) {
  j.at("subject").get_to(m.subject);
  j.at("dataset").get_to(m.dataset);
  j.at("preop_core_cm3").get_to(m.preop_core_cm3);
  j.at("recurrence_enh_cm3").get_to(m.recurrence_enh_cm3);
  j.at("com_distance_cm").get_to(m.com_distance_cm);
  j.at("multifocal").get_to(m.multifocal);
  m.scores.clear();
  for (const auto& s : j.at("scores")) {
    const auto def = parse_recurrence_definition(s.at("recurrence_def").get<std::string>());
    if (!def) throw ValidationError("unknown recurrence definition in results");
    m.scores.push_back({s.at("model").get<std::string>(), *def, s.at("coverage").get<double>(),
                        s.at("under_volumed").get<bool>()});
  }
}

inline json results_to_json(const CohortResults& r) {
  std::vector<std::string> defs;
  for (auto d : r.recurrence_defs) defs.push_back(to_string(d));
  json subjects = json::array();
  for (const auto& s : r.subjects) {
    json e{{"subject", s.subject}, {"dataset", s.dataset}};
    if (s.metrics) e["metrics"] = *s.metrics;
    if (s.skip) e["skip"] = {{"reason", s.skip->reason}, {"detail", s.skip->detail}};
    if (s.calibration)
      e["calibration"] = {{"d_w", s.calibration->d_w},
                          {"rho", s.calibration->rho},
                          {"objective", s.calibration->objective},
                          {"simulations", s.calibration->simulations}};
    subjects.push_back(std::move(e));
  }
  return json{{"schema_version", 1},
              {"cohort_name", r.cohort_name},
              {"columns", r.columns},
              {"recurrence_defs", defs},
              {"alternative", to_string(r.stats.alternative)},
              {"exact_max_n", r.stats.exact_max_n},
              {"subjects", subjects}};
}

inline CohortResults results_from_json(const json& j) {
  CohortResults r;
  try {
    j.at("cohort_name").get_to(r.cohort_name);
    j.at("columns").get_to(r.columns);
    for (const auto& d : j.at("recurrence_defs")) {
      const auto def = parse_recurrence_definition(d.get<std::string>());
      if (!def) throw ValidationError("unknown recurrence definition in results", "/recurrence_defs");
      r.recurrence_defs.push_back(*def);
    }
    const auto alt = j.at("alternative").get<std::string>();
    r.stats.alternative = alt == "two-sided" ? Alternative::TwoSided : Alternative::Greater;
    j.at("exact_max_n").get_to(r.stats.exact_max_n);
    for (const auto& e : j.at("subjects")) {
      SubjectResult s;
      e.at("subject").get_to(s.subject);
      e.at("dataset").get_to(s.dataset);
      if (e.contains("metrics")) s.metrics = e.at("metrics").get<SubjectMetrics>();
      if (e.contains("skip"))
        s.skip = SkipRecord{s.subject, s.dataset, e.at("skip").at("reason").get<std::string>(),
                            e.at("skip").at("detail").get<std::string>()};
      if (e.contains("calibration")) {
        const auto& c = e.at("calibration");
        s.calibration = CalibrationRecord{s.subject, c.at("d_w").get<double>(), c.at("rho").get<double>(),
                                          c.at("objective").get<double>(), c.at("simulations").get<std::size_t>()};
      }
      r.subjects.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed results file: ") + e.what());
  }
  r.reaggregate();
  return r;
}

inline CohortResults load_results(const fs::path& dir) {
  const fs::path path = dir / "results.json";
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path.string(), "", {path.string()});
  try {
    return results_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("results.json is not valid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

namespace report_detail {

inline std::string num(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Display width in code points; the table uses "±" (two bytes in UTF-8).
inline std::size_t width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

inline std::string pad(const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, width(s)), ' '); }

inline std::string render(const std::vector<std::vector<std::string>>& table) {
  std::vector<std::size_t> w;
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (w.size() <= c) w.push_back(0);
      w[c] = std::max(w[c], width(row[c]));
    }
  std::string out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < table[r].size(); ++c) line += (c ? " | " : "| ") + pad(table[r][c], w[c]);
    out += line + " |\n";
    if (r == 0) {
      std::string rule;
      for (std::size_t c = 0; c < w.size(); ++c) rule += (c ? "-|-" : "|-") + std::string(w[c], '-');
      out += rule + "-|\n";
    }
  }
  return out;
}

}  // namespace report_detail

inline std::string subjects_csv(const CohortResults& r) {
  using report_detail::csv_field;
  using report_detail::num;
  std::string out =
      "subject,dataset,model,recurrence_def,coverage,preop_core_cm3,recurrence_enh_cm3,com_distance_cm,multifocal,"
      "under_volumed\n";
  for (const auto& s : r.subjects) {
    if (!s.metrics) continue;
    const auto& m = *s.metrics;
    for (const auto& sc : m.scores)
      out += csv_field(m.subject) + "," + csv_field(m.dataset) + "," + csv_field(sc.model) + "," +
             to_string(sc.definition) + "," + num(sc.coverage) + "," + num(m.preop_core_cm3) + "," +
             num(m.recurrence_enh_cm3) + "," + num(m.com_distance_cm) + "," + (m.multifocal ? "1" : "0") + "," +
             (sc.under_volumed ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string aggregate_csv(const CohortResults& r) {
  using report_detail::csv_field;
  using report_detail::num;
  std::string out = "group,model,recurrence_def,n,mean,stderr,p_value,method\n";
  for (const auto& row : r.rows)
    out += csv_field(row.group) + "," + csv_field(row.model) + "," + to_string(row.definition) + "," +
           std::to_string(row.n) + "," + num(row.mean) + "," + num(row.std_error) + "," +
           (row.p_value ? num(*row.p_value) : "") + "," + (row.method ? to_string(*row.method) : "") + "\n";
  return out;
}

/// Coverage table: one block per recurrence definition, groups as rows
/// (combined cohort last), "mean ± stderr" cells with "*" when p < 0.05,
/// followed by the p-values of each model against the standard plan.
inline std::string coverage_table(const CohortResults& r) {
  using report_detail::num;
  std::vector<std::string> columns{kStandardModel};
  for (const auto& c : r.columns)
    if (c != kStandardModel) columns.push_back(c);

  std::string out;
  for (auto def : r.recurrence_defs) {
    std::vector<std::string> groups;
    for (const auto& row : r.rows)
      if (row.definition == def && (groups.empty() || groups.back() != row.group)) groups.push_back(row.group);
    // Group names can repeat (dataset named like the cohort), so walk rows in order.
    std::vector<std::vector<std::string>> table{{"Dataset", "n"}}, ptable{{"Dataset"}};
    for (const auto& c : columns) table[0].push_back(c);
    for (const auto& c : columns)
      if (c != kStandardModel) ptable[0].push_back(c);
    std::vector<std::string> line, pline;
    std::string current;
    bool current_combined = false;
    auto flush = [&] {
      if (!line.empty()) table.push_back(line);
      if (pline.size() > 1) ptable.push_back(pline);
      line.clear();
      pline.clear();
    };
    for (const auto& row : r.rows) {
      if (row.definition != def) continue;
      if (line.empty() || row.group != current || row.combined != current_combined) {
        flush();
        current = row.group;
        current_combined = row.combined;
        line = {row.group, std::to_string(row.n)};
        pline = {row.group};
      }
      std::string cell = num(row.mean, "%.2f") + " ± " + num(row.std_error, "%.2f");
      if (row.p_value && *row.p_value < 0.05) cell += "*";
      line.push_back(cell);
      if (row.model != kStandardModel)
        pline.push_back(row.p_value ? num(*row.p_value, "%.2g") + " (" + to_string(*row.method) + ")" : "");
    }
    flush();
    out += "Recurrence coverage (%), " + std::string(to_string(def)) + " recurrence\n\n";
    out += report_detail::render(table);
    if (ptable.size() > 1) {
      out += "\nWilcoxon signed-rank p vs standard (" + std::string(to_string(r.stats.alternative)) + ")\n\n";
      out += report_detail::render(ptable);
    }
    out += "\n";
  }
  out += "* p < 0.05\n";
  return out;
}

/// Median cohort geometry per dataset and for the combined cohort.
inline std::string exploration_csv(const CohortResults& r) {
  using report_detail::csv_field;
  using report_detail::median;
  using report_detail::num;
  const auto metrics = r.scored();
  std::vector<std::string> datasets;
  for (const auto& m : metrics) datasets.push_back(m.dataset);
  std::sort(datasets.begin(), datasets.end());
  datasets.erase(std::unique(datasets.begin(), datasets.end()), datasets.end());
  std::string out =
      "group,n,median_preop_core_cm3,median_recurrence_enh_cm3,median_com_distance_cm,multifocal_count\n";
  auto row = [&](const std::string& name, bool combined) {
    std::vector<double> core, rec, dist;
    std::size_t multi = 0;
    for (const auto& m : metrics) {
      if (!combined && m.dataset != name) continue;
      core.push_back(m.preop_core_cm3);
      rec.push_back(m.recurrence_enh_cm3);
      dist.push_back(m.com_distance_cm);
      multi += m.multifocal ? 1 : 0;
    }
    if (core.empty()) return;
    out += csv_field(name) + "," + std::to_string(core.size()) + "," + num(median(core)) + "," +
           num(median(rec)) + "," + num(median(dist)) + "," + std::to_string(multi) + "\n";
  };
  for (const auto& d : datasets) row(d, false);
  row(r.cohort_name, true);
  return out;
}

inline std::string skips_csv(const CohortResults& r) {
  using report_detail::csv_field;
  std::string out = "subject,dataset,reason,detail\n";
  for (const auto& s : r.skips())
    out += csv_field(s.subject) + "," + csv_field(s.dataset) + "," + s.reason + "," + csv_field(s.detail) + "\n";
  return out;
}

inline std::string calibration_csv(const CohortResults& r) {
  using report_detail::csv_field;
  using report_detail::num;
  std::string out = "subject,d_w,rho,objective,simulations\n";
  for (const auto& s : r.subjects)
    if (s.calibration)
      out += csv_field(s.subject) + "," + num(s.calibration->d_w) + "," + num(s.calibration->rho) + "," +
             num(s.calibration->objective) + "," + std::to_string(s.calibration->simulations) + "\n";
  return out;
}

inline const std::vector<std::string> kReportFiles{"subjects.csv",    "aggregate.csv", "table.txt",      "exploration.csv",
                                                   "skips.csv",       "calibration.csv", "results.json"};

/// Writes the report file set into out_dir.
inline void emit_report(const CohortResults& r, const fs::path& out_dir) {
  if (r.rows.empty()) throw ContractError("emit_report needs aggregated results");
  if (r.columns.empty()) throw ContractError("emit_report needs at least one model");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto put = [&](const char* name, const std::string& text) {
    const fs::path p = out_dir / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
    if (!f) throw IoError("write failed: " + p.string());
  };
  put("subjects.csv", subjects_csv(r));
  put("aggregate.csv", aggregate_csv(r));
  put("table.txt", coverage_table(r));
  put("exploration.csv", exploration_csv(r));
  put("skips.csv", skips_csv(r));
  put("calibration.csv", calibration_csv(r));
  put("results.json", results_to_json(r).dump(2) + "\n");
}

}  // namespace gbm
