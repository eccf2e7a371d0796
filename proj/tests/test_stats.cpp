#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "gbmbench/stats.hpp"
#include "oracles.hpp"

using namespace gbm;

namespace {

std::vector<double> random_ties(std::mt19937_64& rng, std::size_t n) {
  // coarse grid of values so that ties and zero differences are common
  std::vector<double> v(n);
  for (auto& x : v) x = double(rng() % 7) / 6.0;
  return v;
}

SubjectMetrics subject(const std::string& id, const std::string& ds, double standard, double model) {
  SubjectMetrics m;
  m.subject = id;
  m.dataset = ds;
  m.scores.push_back({kStandardModel, RecurrenceDefinition::Enhancing, standard, false});
  m.scores.push_back({"model", RecurrenceDefinition::Enhancing, model, false});
  return m;
}

}  // namespace

TEST(Wilcoxon, AllPositiveThree) {
  const auto r = wilcoxon_signed_rank({2, 3, 4}, {1, 1, 1});
  EXPECT_EQ(r.n_effective, 3u);
  EXPECT_EQ(r.w_plus, 6.0);
  EXPECT_EQ(r.p_value, 0.125);
  EXPECT_EQ(r.method, WilcoxonMethod::Exact);
  EXPECT_EQ(oracle::wilcoxon_enumerated({2, 3, 4}, {1, 1, 1}, false), 0.125);
}

TEST(Wilcoxon, DegenerateAndErrors) {
  const auto r = wilcoxon_signed_rank({0.3, 0.4}, {0.3, 0.4});
  EXPECT_EQ(r.n_effective, 0u);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.method, WilcoxonMethod::Exact);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2}, {1}), ContractError);
  EXPECT_THROW(wilcoxon_signed_rank({}, {}), ContractError);
}

TEST(Wilcoxon, MidRanks) {
  const auto sr = signed_ranks({1, 3, -1, 0, 5}, {0, 2, 1, 0, 0});
  // |d| = 1, 1, 2, 5 -> ranks 1.5, 1.5, 3, 4
  ASSERT_EQ(sr.ranks.size(), 4u);
  EXPECT_EQ(sr.ranks[0], 1.5);
  EXPECT_EQ(sr.ranks[1], 1.5);
  EXPECT_EQ(sr.ranks[2], 3.0);
  EXPECT_EQ(sr.ranks[3], 4.0);
}

TEST(Wilcoxon, ExactMatchesEnumerationWithTiesAndZeros) {
  std::mt19937_64 rng(100);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const auto a = random_ties(rng, n), b = random_ties(rng, n);
    for (auto alt : {Alternative::Greater, Alternative::TwoSided}) {
      const auto r = wilcoxon_signed_rank(a, b, {alt, 25});
      ASSERT_NEAR(r.p_value, oracle::wilcoxon_enumerated(a, b, alt == Alternative::TwoSided), 1e-12);
    }
  }
}

TEST(Wilcoxon, ExactDistributionSumsToOne) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const auto a = random_ties(rng, n), b = random_ties(rng, n);
    const auto sr = signed_ranks(a, b);
    if (sr.ranks.empty()) continue;
    double total = 0.0;
    double prev_upper = 1.0;
    // P(W = w) = P(W >= w) - P(W >= w + 1/2) over half-integer support
    const double max_w = std::accumulate(sr.ranks.begin(), sr.ranks.end(), 0.0);
    for (double w = 0.0; w <= max_w + 0.5; w += 0.5) {
      const double upper_next = exact_signed_rank_tails(sr.ranks, w + 0.5).first;
      total += prev_upper - upper_next;
      prev_upper = upper_next;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Wilcoxon, NegationSymmetry) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<double> d(n), z(n, 0.0), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = u(rng);
      neg[i] = -d[i];
    }
    const auto r = wilcoxon_signed_rank(d, z), rn = wilcoxon_signed_rank(neg, z);
    const double total = double(n * (n + 1)) / 2.0;
    EXPECT_EQ(rn.w_plus, total - r.w_plus);
    const auto sr = signed_ranks(d, z);
    const auto [up, lo] = exact_signed_rank_tails(sr.ranks, r.w_plus);
    const double point = up + lo - 1.0;  // P(W = w)
    EXPECT_NEAR(rn.p_value, 1.0 - r.p_value + point, 1e-12);
  }
}

TEST(Wilcoxon, NormalApproximationAgreesNearCrossover) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 20 + rng() % 6;
    std::vector<double> a(n), b(n, 0.0);
    const double shift = 0.5 * g(rng);
    for (auto& x : a) x = g(rng) + shift;
    const auto exact = wilcoxon_signed_rank(a, b, {Alternative::Greater, 25});
    const auto approx = wilcoxon_signed_rank(a, b, {Alternative::Greater, 0});
    ASSERT_EQ(exact.method, WilcoxonMethod::Exact);
    ASSERT_EQ(approx.method, WilcoxonMethod::NormalApprox);
    EXPECT_NEAR(approx.p_value, exact.p_value, 0.01);
  }
}

TEST(Wilcoxon, CrossoverAtTwentyFive) {
  std::vector<double> a(26), b(26, 0.0);
  for (std::size_t i = 0; i < 26; ++i) a[i] = double(i + 1) * (i % 3 == 0 ? -1.0 : 1.0);
  EXPECT_EQ(wilcoxon_signed_rank(a, b).method, WilcoxonMethod::NormalApprox);
  a.pop_back();
  b.pop_back();
  EXPECT_EQ(wilcoxon_signed_rank(a, b).method, WilcoxonMethod::Exact);
}

TEST(MeanStderr, Cases) {
  auto a = mean_stderr({1, 1, 1});
  EXPECT_EQ(a.mean, 1.0);
  EXPECT_EQ(a.std_error, 0.0);
  auto b = mean_stderr({0, 2});
  EXPECT_EQ(b.mean, 1.0);
  EXPECT_NEAR(b.std_error, 1.0, 1e-15);
  EXPECT_EQ(mean_stderr({0.4}).std_error, 0.0);
  EXPECT_THROW(mean_stderr({}), ContractError);
}

TEST(Aggregate, SingleSubject) {
  const auto rows = aggregate({subject("a", "D", 0.5, 0.7)}, "ALL", {"model"}, {RecurrenceDefinition::Enhancing});
  ASSERT_EQ(rows.size(), 4u);  // D and ALL, standard and model
  for (const auto& r : rows) {
    EXPECT_EQ(r.std_error, 0.0);
    EXPECT_EQ(r.n, 1u);
    if (r.model == kStandardModel) {
      EXPECT_FALSE(r.p_value.has_value());
    } else {
      ASSERT_TRUE(r.p_value.has_value());
      EXPECT_EQ(*r.method, WilcoxonMethod::Exact);
      EXPECT_EQ(*r.p_value, 0.5);
    }
  }
  EXPECT_FALSE(rows[0].combined);
  EXPECT_TRUE(rows[3].combined);
  EXPECT_EQ(rows[3].group, "ALL");
}

TEST(Aggregate, PartitionAndDominance) {
  std::vector<SubjectMetrics> ms;
  for (int i = 0; i < 4; ++i) ms.push_back(subject("a" + std::to_string(i), "A", 0.5, 0.5 + 0.05 * (i + 1)));
  for (int i = 0; i < 3; ++i) ms.push_back(subject("b" + std::to_string(i), "B", 0.2, 0.2 + 0.07 * (i + 1)));
  ms.push_back(subject("b9", "B", 0.3, 0.3));  // zero difference, dropped
  const auto rows = aggregate(ms, "ALL", {"model"}, {RecurrenceDefinition::Enhancing});
  std::size_t n_a = 0, n_b = 0, n_all = 0;
  for (const auto& r : rows) {
    if (r.model != "model") continue;
    if (r.group == "A") n_a = r.n;
    if (r.group == "B") n_b = r.n;
    if (r.group == "ALL") {
      n_all = r.n;
      // 7 nonzero, all positive, distinct magnitudes -> 2^-7
      EXPECT_EQ(*r.p_value, std::ldexp(1.0, -7));
    }
  }
  EXPECT_EQ(n_a + n_b, n_all);

  auto shuffled = ms;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto again = aggregate(shuffled, "ALL", {"model"}, {RecurrenceDefinition::Enhancing});
  ASSERT_EQ(again.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(again[i].mean, rows[i].mean);
    EXPECT_EQ(again[i].std_error, rows[i].std_error);
    EXPECT_EQ(again[i].p_value, rows[i].p_value);
  }
}
