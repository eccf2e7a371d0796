// gbmbench command line: phantom generation, simulation, planning, cohort
// evaluation and report rendering.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gbmbench/harness.hpp"
#include "gbmbench/phantom.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInvalid = 2, kCohort = 3 };

json read_json_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw gbm::ValidationError("cannot open " + p.string(), "", {p.string()});
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw gbm::ValidationError(p.string() + " is not valid JSON: " + e.what());
  }
}

const gbm::SubjectEntry& find_subject(const gbm::Manifest& m, const std::string& id) {
  for (const auto& s : m.subjects)
    if (s.id == id) return s;
  throw gbm::ValidationError("subject " + id + " not in manifest");
}

gbm::TissueMaps read_tissue(const gbm::SubjectEntry& s) {
  gbm::TissueMaps t{gbm::read_scalar(s.p_wm), gbm::read_scalar(s.p_gm), gbm::read_scalar(s.p_csf)};
  t.validate();
  return t;
}

gbm::GrowthParams params_from_json(const json& j) {
  gbm::GrowthParams p;
  try {
    for (const auto& [key, value] : j.items())
      if (key != "d_w" && key != "rho" && key != "t_end" && key != "seed_mm" && key != "gm_ratio")
        throw gbm::ValidationError("unknown key", "/" + key);
    j.at("d_w").get_to(p.d_w);
    j.at("rho").get_to(p.rho);
    if (j.contains("t_end")) j.at("t_end").get_to(p.t_end);
    if (j.contains("gm_ratio")) j.at("gm_ratio").get_to(p.gm_ratio);
    const auto seed = j.at("seed_mm").get<std::array<double, 3>>();
    p.seed = {seed[0], seed[1], seed[2]};
  } catch (const json::exception& e) {
    throw gbm::ValidationError(std::string("growth parameters: ") + e.what());
  }
  try {
    p.validate();
  } catch (const gbm::ContractError& e) {
    throw gbm::ValidationError(e.what());
  }
  return p;
}

gbm::CellMap builtin_cellmap(const gbm::SubjectEntry& s, const gbm::CalibrationConfig& cal, std::string params) {
  const auto tissue = read_tissue(s);
  if (params == "calibrate") {
    const auto preop = gbm::read_labels(s.preop, s.label_remap);
    const auto res = gbm::calibrate_fk(preop, tissue, cal);
    std::printf("calibrated d_w=%.6g rho=%.6g objective=%.6g simulations=%zu\n", res.params.d_w, res.params.rho,
                res.objective, res.simulations);
    return res.cellmap;
  }
  const auto p = params_from_json(read_json_file(params));
  const double width = cal.seed_width_mm;
  return gbm::simulate_fk(gbm::seed_initial_condition(p.seed, tissue.meta(), width),
                          gbm::build_diffusion_field(tissue, p), p.rho, p.t_end);
}

int cmd_phantom(const std::string& config, std::size_t n, const fs::path& out) {
  gbm::PhantomConfig cfg;
  if (!config.empty()) cfg = read_json_file(config).get<gbm::PhantomConfig>();
  const fs::path manifest = gbm::generate_cohort(cfg, n, out);
  std::printf("%s\n", manifest.string().c_str());
  return kOk;
}

int cmd_simulate(const fs::path& manifest, const std::string& subject, const std::string& params,
                 const std::string& config, const fs::path& out) {
  const auto m = gbm::load_manifest(manifest);
  const auto cfg = config.empty() ? gbm::RunConfig{} : gbm::load_run_config(config);
  const auto cm = builtin_cellmap(find_subject(m, subject), cfg.calibration, params);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  gbm::write_volume(cm.density(), out);
  return kOk;
}

int cmd_plan(const fs::path& manifest, const std::string& subject, const std::string& model, double margin,
             const std::string& params, const std::string& config, const fs::path& out) {
  const auto m = gbm::load_manifest(manifest);
  const auto& s = find_subject(m, subject);
  const auto cfg = config.empty() ? gbm::RunConfig{} : gbm::load_run_config(config);
  const auto preop = gbm::read_labels(s.preop, s.label_remap);
  const auto brain = gbm::read_mask(s.brain_mask);
  const gbm::Mask core = gbm::tumor_core(preop);
  fs::create_directories(out);

  const auto standard = gbm::standard_plan(core, brain, margin);
  gbm::write_volume(standard.target, out / "plan_standard.nii.gz");
  json summary{{"subject", subject},
               {"standard", {{"voxels", standard.voxel_count}, {"volume_cm3", standard.volume_cm3}}}};
  if (model != gbm::kStandardModel) {
    gbm::CellMap cm;
    if (model == gbm::kBuiltinModel) {
      cm = builtin_cellmap(s, cfg.calibration, params);
    } else {
      const auto it = s.cellmaps.find(gbm::RunConfig::column(model));
      if (it == s.cellmaps.end()) throw gbm::ValidationError("subject " + subject + " has no cell map " + model);
      cm = gbm::CellMap(gbm::read_scalar(it->second));
    }
    const auto plan = gbm::model_plan(cm, brain, standard.voxel_count);
    const std::string column = gbm::RunConfig::column(model);
    gbm::write_volume(plan.target, out / ("plan_" + column + ".nii.gz"));
    summary[column] = {{"voxels", plan.voxel_count},
                       {"volume_cm3", plan.volume_cm3},
                       {"threshold", plan.threshold ? json(*plan.threshold) : json(nullptr)},
                       {"under_volumed", plan.under_volumed}};
  }
  std::printf("%s\n", summary.dump(2).c_str());
  return kOk;
}

int cmd_evaluate(const std::vector<std::string>& manifests, const std::string& config, const fs::path& out,
                 std::size_t parallelism) {
  auto cfg = config.empty() ? gbm::RunConfig{} : gbm::load_run_config(config);
  if (parallelism > 0) cfg.parallelism = parallelism;
  if (cfg.output_dir.empty()) cfg.output_dir = out;
  cfg.validate();
  std::vector<gbm::Manifest> parts;
  for (const auto& m : manifests) parts.push_back(gbm::load_manifest(m));
  const gbm::Manifest all = parts.size() == 1 ? parts[0] : gbm::merge_manifests(parts, gbm::kCombinedCohort);
  const auto results = gbm::run_cohort(all, cfg);
  gbm::emit_report(results, out);
  std::fputs(gbm::coverage_table(results).c_str(), stdout);
  const auto skips = results.skips();
  std::printf("\n%zu scored, %zu skipped; reports in %s\n", results.scored().size(), skips.size(),
              out.string().c_str());
  return kOk;
}

int cmd_report(const fs::path& dir, const std::string& format) {
  const auto r = gbm::load_results(dir);
  if (format == "table")
    std::fputs(gbm::coverage_table(r).c_str(), stdout);
  else
    std::fputs(gbm::aggregate_csv(r).c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiotherapy-plan benchmark for tumor growth models"};
  app.require_subcommand(1);

  std::string config, params = "calibrate", subject, model = gbm::kStandardModel, format = "table";
  std::string manifest, out;
  std::vector<std::string> manifests;
  std::size_t n = 20, parallelism = 0;
  double margin = gbm::kDefaultMarginMm;

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic cohort with its manifest");
  phantom->add_option("--config", config, "phantom config (JSON)")->check(CLI::ExistingFile);
  phantom->add_option("--n", n, "number of subjects")->check(CLI::PositiveNumber);
  phantom->add_option("--out", out, "output directory")->required();

  auto* simulate = app.add_subcommand("simulate", "write a built-in FK cell map for one subject");
  simulate->add_option("--manifest", manifest)->required();
  simulate->add_option("--subject", subject)->required();
  simulate->add_option("--params", params, "growth parameter JSON, or \"calibrate\"");
  simulate->add_option("--config", config, "run config (calibration settings)");
  simulate->add_option("--out", out, "output .nii.gz")->required();

  auto* plan = app.add_subcommand("plan", "write the standard plan and one model plan for a subject");
  plan->add_option("--manifest", manifest)->required();
  plan->add_option("--subject", subject)->required();
  plan->add_option("--model", model, "standard, fk-builtin or external:<name>");
  plan->add_option("--margin", margin, "standard margin in mm")->check(CLI::NonNegativeNumber);
  plan->add_option("--params", params, "growth parameter JSON, or \"calibrate\" (fk-builtin only)");
  plan->add_option("--config", config, "run config (calibration settings)");
  plan->add_option("--out", out, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "run the full pipeline and write reports");
  evaluate->add_option("--manifest", manifests, "manifest; repeat to concatenate cohorts")->required();
  evaluate->add_option("--config", config, "run config (JSON)");
  evaluate->add_option("--out", out, "report directory")->required();
  evaluate->add_option("--parallelism", parallelism, "worker threads (overrides the config)");

  auto* report = app.add_subcommand("report", "render a finished run");
  report->add_option("--results", out, "report directory of a previous evaluate")->required();
  report->add_option("--format", format)->check(CLI::IsMember({"csv", "table"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*phantom) return cmd_phantom(config, n, out);
    if (*simulate) return cmd_simulate(manifest, subject, params, config, out);
    if (*plan) return cmd_plan(manifest, subject, model, margin, params, config, out);
    if (*evaluate) return cmd_evaluate(manifests, config, out, parallelism);
    if (*report) return cmd_report(out, format);
  } catch (const gbm::CohortError& e) {
    std::fprintf(stderr, "cohort error: %s\n", e.what());
    return kCohort;
  } catch (const gbm::GenerationError& e) {
    std::fprintf(stderr, "generation error: %s\n", e.what());
    return kCohort;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kUsage;
}
