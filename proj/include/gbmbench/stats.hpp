#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gbmbench/errors.hpp"
#include "gbmbench/metrics.hpp"

namespace gbm {

enum class Alternative { Greater, TwoSided };
enum class WilcoxonMethod { Exact, NormalApprox };

inline const char* to_string(Alternative a) noexcept { return a == Alternative::Greater ? "greater" : "two-sided"; }
inline const char* to_string(WilcoxonMethod m) noexcept { return m == WilcoxonMethod::Exact ? "exact" : "normal"; }

struct WilcoxonOptions {
  Alternative alternative = Alternative::Greater;
  /// Largest effective sample size evaluated exactly.
  std::size_t exact_max_n = 25;
};

struct WilcoxonResult {
  std::size_t n_effective = 0;
  double w_plus = 0.0;
  double p_value = 1.0;
  WilcoxonMethod method = WilcoxonMethod::Exact;
};

/// Nonzero paired differences with their mid-ranks of |d|.
struct SignedRanks {
  std::vector<double> differences;
  std::vector<double> ranks;
  std::vector<std::size_t> tie_sizes;  // one entry per group of equal |d|
};

inline SignedRanks signed_ranks(const std::vector<double>& model_vals, const std::vector<double>& standard_vals) {
  if (model_vals.size() != standard_vals.size())
    throw ContractError("wilcoxon: paired samples differ in length (" + std::to_string(model_vals.size()) + " vs " +
                        std::to_string(standard_vals.size()) + ")");
  if (model_vals.empty()) throw ContractError("wilcoxon: empty samples");
  SignedRanks sr;
  for (std::size_t i = 0; i < model_vals.size(); ++i) {
    const double d = model_vals[i] - standard_vals[i];
    if (!std::isfinite(d)) throw ContractError("wilcoxon: non-finite difference");
    if (d != 0.0) sr.differences.push_back(d);
  }
  const std::size_t n = sr.differences.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(sr.differences[a]) < std::abs(sr.differences[b]);
  });
  sr.ranks.assign(n, 0.0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(sr.differences[order[j + 1]]) == std::abs(sr.differences[order[i]])) ++j;
    // positions i..j (0-based) share the mean of ranks i+1..j+1
    const double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) sr.ranks[order[k]] = mid;
    sr.tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }
  return sr;
}

namespace stats_detail {

// Number of sign assignments per doubled rank sum; counts[s] is the number
// of subsets of ranks whose doubled sum equals s.
inline std::vector<std::uint64_t> signed_rank_counts(const std::vector<long>& doubled_ranks) {
  long total = 0;
  for (long r : doubled_ranks) total += r;
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
  counts[0] = 1;
  long reach = 0;
  for (long r : doubled_ranks) {
    for (long s = reach; s >= 0; --s)
      if (counts[static_cast<std::size_t>(s)]) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    reach += r;
  }
  return counts;
}

inline double normal_upper(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace stats_detail

/// Exact null distribution of W+ over all 2^n sign assignments of the
/// given (mid-)ranks. Returns {P(W >= w), P(W <= w)}.
inline std::pair<double, double> exact_signed_rank_tails(const std::vector<double>& ranks, double w_plus) {
  if (ranks.size() > 62) throw ContractError("exact signed-rank distribution limited to n <= 62");
  std::vector<long> doubled;
  doubled.reserve(ranks.size());
  for (double r : ranks) doubled.push_back(std::lround(2.0 * r));
  const auto counts = stats_detail::signed_rank_counts(doubled);
  const long w2 = std::lround(2.0 * w_plus);
  std::uint64_t upper = 0, lower = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (static_cast<long>(s) >= w2) upper += counts[s];
    if (static_cast<long>(s) <= w2) lower += counts[s];
  }
  const double total = std::ldexp(1.0, static_cast<int>(ranks.size()));
  return {static_cast<double>(upper) / total, static_cast<double>(lower) / total};
}

/// Paired Wilcoxon signed-rank test of model against standard.
///
/// Zero differences are dropped; ties get mid-ranks. Up to
/// `exact_max_n` nonzero pairs the p-value is exact, otherwise it uses the
/// tie-corrected normal approximation with continuity correction.
/// Greater tests model > standard; TwoSided doubles the smaller tail, capped at 1.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& model_vals,
                                           const std::vector<double>& standard_vals,
                                           const WilcoxonOptions& opts = {}) {
  const SignedRanks sr = signed_ranks(model_vals, standard_vals);
  WilcoxonResult res;
  res.n_effective = sr.differences.size();
  for (std::size_t i = 0; i < sr.differences.size(); ++i)
    if (sr.differences[i] > 0.0) res.w_plus += sr.ranks[i];
  if (res.n_effective == 0) {
    res.p_value = 1.0;
    res.method = WilcoxonMethod::Exact;
    return res;
  }

  if (res.n_effective <= opts.exact_max_n) {
    res.method = WilcoxonMethod::Exact;
    const auto [upper, lower] = exact_signed_rank_tails(sr.ranks, res.w_plus);
    res.p_value = opts.alternative == Alternative::Greater ? upper : std::min(1.0, 2.0 * std::min(upper, lower));
    return res;
  }

  res.method = WilcoxonMethod::NormalApprox;
  const auto n = static_cast<double>(res.n_effective);
  const double mu = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  for (std::size_t t : sr.tie_sizes) {
    const auto tt = static_cast<double>(t);
    var -= (tt * tt * tt - tt) / 48.0;
  }
  const double sigma = std::sqrt(var);
  const double diff = res.w_plus - mu;
  if (opts.alternative == Alternative::Greater) {
    // P(W >= w) with the half-unit correction toward the tail
    res.p_value = stats_detail::normal_upper((diff - 0.5) / sigma);
  } else {
    const double z = std::max(0.0, std::abs(diff) - 0.5) / sigma;
    res.p_value = std::min(1.0, 2.0 * stats_detail::normal_upper(z));
  }
  return res;
}

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Arithmetic mean and standard error (sample sd with n-1, over sqrt n).
inline MeanStderr mean_stderr(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("mean_stderr of an empty list");
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  MeanStderr out;
  out.mean = sum / n;
  if (values.size() == 1) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return out;
}

struct AggregateRow {
  std::string group;  // dataset name, or the cohort name for the combined row
  std::string model;
  RecurrenceDefinition definition = RecurrenceDefinition::Enhancing;
  std::size_t n = 0;
  double mean = 0.0;    // percent
  double std_error = 0.0;  // percent
  std::optional<double> p_value;  // absent on the standard rows
  std::optional<WilcoxonMethod> method;
  bool combined = false;
};

/// Table rows for every (group, definition, model): the per-dataset groups
/// in name order followed by the combined cohort. Models other than
/// "standard" carry a paired Wilcoxon p against the standard plan of the
/// same group. Subject order of the input does not matter.
inline std::vector<AggregateRow> aggregate(std::vector<SubjectMetrics> metrics, const std::string& cohort_name,
                                           const std::vector<std::string>& models,
                                           const std::vector<RecurrenceDefinition>& defs,
                                           const WilcoxonOptions& opts = {}) {
  if (metrics.empty()) throw ContractError("aggregate of an empty cohort");
  std::sort(metrics.begin(), metrics.end(), [](const SubjectMetrics& a, const SubjectMetrics& b) {
    return a.subject != b.subject ? a.subject < b.subject : a.dataset < b.dataset;
  });

  std::vector<std::string> datasets;
  for (const auto& m : metrics) datasets.push_back(m.dataset);
  std::sort(datasets.begin(), datasets.end());
  datasets.erase(std::unique(datasets.begin(), datasets.end()), datasets.end());

  std::vector<std::string> columns{kStandardModel};
  for (const auto& m : models)
    if (m != kStandardModel) columns.push_back(m);

  std::vector<AggregateRow> rows;
  auto emit_group = [&](const std::string& group, bool combined) {
    for (auto def : defs) {
      for (const auto& model : columns) {
        std::vector<double> vals, paired_model, paired_std;
        for (const auto& m : metrics) {
          if (!combined && m.dataset != group) continue;
          const auto v = m.coverage_of(model, def);
          if (!v) continue;
          vals.push_back(*v);
          if (model != kStandardModel) {
            if (const auto s = m.coverage_of(kStandardModel, def)) {
              paired_model.push_back(*v);
              paired_std.push_back(*s);
            }
          }
        }
        if (vals.empty()) continue;
        const auto ms = mean_stderr(vals);
        AggregateRow row;
        row.group = group;
        row.model = model;
        row.definition = def;
        row.n = vals.size();
        row.mean = 100.0 * ms.mean;
        row.std_error = 100.0 * ms.std_error;
        row.combined = combined;
        if (model != kStandardModel && !paired_model.empty()) {
          const auto w = wilcoxon_signed_rank(paired_model, paired_std, opts);
          row.p_value = w.p_value;
          row.method = w.method;
        }
        rows.push_back(std::move(row));
      }
    }
  };
  for (const auto& d : datasets) emit_group(d, false);
  emit_group(cohort_name, true);
  return rows;
}

}  // namespace gbm
