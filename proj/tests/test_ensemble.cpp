#include "efsc/ensemble.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace efsc;

namespace {

ScoredFeatures run(std::vector<double> scores, SelectorId id = SelectorId::UNI,
                   std::vector<std::string> names = {"a", "b", "c", "d"}) {
  return make_scored(std::move(names), std::move(scores), id);
}

std::vector<std::string> kept_names(const std::vector<ScoredFeatures>& runs, const std::vector<double>& agg,
                                    ThresholdId t, std::size_t p_total) {
  std::vector<std::string> out;
  for (auto j : apply_threshold(runs, agg, t, p_total).kept) out.push_back(runs.front().names[j]);
  return out;
}

}  // namespace

TEST(Bootstrap, DeterministicAndAlwaysHasEvents) {
  std::vector<int> event(30, 0);
  event[7] = 1;  // a single event: many plain resamples would miss it
  for (std::size_t b = 0; b < 20; ++b) {
    const auto rows = bootstrap_rows(event, b, 123);
    EXPECT_EQ(rows, bootstrap_rows(event, b, 123));
    EXPECT_NE(std::find(rows.begin(), rows.end(), 7u), rows.end());
  }
  EXPECT_NE(bootstrap_rows(event, 0, 123), bootstrap_rows(event, 1, 123));
}

TEST(Aggregate, MeanScoreAndMedianRank) {
  const std::vector<ScoredFeatures> runs{run({4, 3, 2, 1}), run({1, 3, 2, 4}), run({4, 2, 3, 1})};
  const auto mean = aggregate(runs, AggregatorId::MEAN_SCORE);
  EXPECT_DOUBLE_EQ(mean[0], 3.0);
  EXPECT_DOUBLE_EQ(mean[3], 2.0);
  const auto med = aggregate(runs, AggregatorId::MEDIAN_RANK);
  // ranks of "a": 1, 4, 1 -> median 1 -> (4 - 1 + 1) / 4
  EXPECT_DOUBLE_EQ(med[0], 1.0);
  // ranks of "b": 2, 2, 3 -> median 2
  EXPECT_DOUBLE_EQ(med[1], 0.75);
}

TEST(Aggregate, FrequencyUsesSelectionForSparseAndTopHalfForFilters) {
  const std::vector<ScoredFeatures> sparse{run({0.5, 0, 0, 0.1}, SelectorId::LASSO), run({0.2, 0.3, 0, 0}, SelectorId::LASSO)};
  EXPECT_EQ(aggregate(sparse, AggregatorId::FREQ), (std::vector<double>{1.0, 0.5, 0.0, 0.5}));
  const std::vector<ScoredFeatures> filters{run({4, 3, 2, 1}), run({1, 3, 2, 4})};
  EXPECT_EQ(aggregate(filters, AggregatorId::FREQ), (std::vector<double>{0.5, 1.0, 0.0, 0.5}));
}

TEST(Rra, MatchesBinomialTailOracle) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 7;
    std::vector<std::vector<double>> lists(static_cast<std::size_t>(n), std::vector<double>(3));
    for (auto& l : lists)
      for (auto& v : l) v = u(rng);
    const auto res = rra_pvalues(lists);
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<double> r;
      for (const auto& l : lists) r.push_back(l[j]);
      std::sort(r.begin(), r.end());
      double rho = 1.0;
      for (int k = 1; k <= n; ++k) rho = std::min(rho, oracle::beta_order_cdf(k, n, r[static_cast<std::size_t>(k - 1)]));
      EXPECT_NEAR(res.rho[j], rho, 1e-12);
      EXPECT_NEAR(res.p_value[j], std::min(1.0, n * rho), 1e-12);
    }
  }
}

TEST(Rra, FrozenFiveListValue) {
  // rank 0.05 in one list and last in the other four: rho = 1 - 0.95^5, p = min(1, 5 rho) = 1
  const std::vector<std::vector<double>> lists{{0.05}, {1.0}, {1.0}, {1.0}, {1.0}};
  const auto res = rra_pvalues(lists);
  EXPECT_NEAR(res.rho[0], 1.0 - std::pow(0.95, 5), 1e-12);
  EXPECT_NEAR(res.rho[0], 0.2262, 1e-4);
  EXPECT_DOUBLE_EQ(res.p_value[0], 1.0);
}

TEST(Thresholds, FixedFractionKeepsTiesAndDropsZeros) {
  const std::vector<ScoredFeatures> runs{run({0.9, 0.5, 0.5, 0.0}, SelectorId::UNI)};
  const std::vector<double> agg{0.9, 0.5, 0.5, 0.0};
  EXPECT_EQ(kept_names(runs, agg, ThresholdId::FIX_10, 4), (std::vector<std::string>{"a"}));
  EXPECT_EQ(kept_names(runs, agg, ThresholdId::FIX_25, 8), (std::vector<std::string>{"a", "b", "c"}));
  const std::vector<double> zeros{0.0, 0.0, 0.0, 0.0};
  EXPECT_TRUE(kept_names(runs, zeros, ThresholdId::FIX_33, 4).empty());
}

TEST(Thresholds, BestProbeIsStrict) {
  const std::vector<std::string> names{"a", "b", "__probe_1", "__probe_2"};
  const std::vector<ScoredFeatures> runs{run({0.8, 0.6, 0.6, 0.2}, SelectorId::UNI, names)};
  const std::vector<double> agg{0.8, 0.6, 0.6, 0.2};
  EXPECT_EQ(kept_names(runs, agg, ThresholdId::BEST_PROBE, 2), (std::vector<std::string>{"a"}));
  const std::vector<ScoredFeatures> no_probe{run({1, 2, 3, 4})};
  EXPECT_THROW(apply_threshold(no_probe, std::vector<double>{1, 2, 3, 4}, ThresholdId::BEST_PROBE, 4),
               std::invalid_argument);
}

TEST(Thresholds, Q75UsesTypeSevenQuantile) {
  std::vector<std::string> names;
  std::vector<double> agg;
  for (int j = 1; j <= 9; ++j) {
    names.push_back("f" + std::to_string(j));
    agg.push_back(j);
  }
  const std::vector<ScoredFeatures> runs{run(agg, SelectorId::UNI, names)};
  const auto res = apply_threshold(runs, agg, ThresholdId::Q75, 9);
  EXPECT_DOUBLE_EQ(res.threshold_value, 7.0);
  EXPECT_EQ(res.kept, (std::vector<std::size_t>{7, 8}));
}

TEST(Thresholds, KdeFindsValleyOrFallsBack) {
  std::vector<std::string> names;
  std::vector<double> agg;
  for (int j = 0; j < 20; ++j) {
    names.push_back("f" + std::to_string(j));
    agg.push_back(j < 15 ? 0.1 + 0.001 * j : 0.9 + 0.001 * j);
  }
  const std::vector<ScoredFeatures> runs{run(agg, SelectorId::UNI, names)};
  const auto res = apply_threshold(runs, agg, ThresholdId::KDE, 20);
  EXPECT_TRUE(res.note.empty());
  EXPECT_EQ(res.kept.size(), 5u);
  std::vector<double> flat(20);
  for (int j = 0; j < 20; ++j) flat[static_cast<std::size_t>(j)] = j;
  const std::vector<ScoredFeatures> uni{run(flat, SelectorId::UNI, names)};
  const auto fb = apply_threshold(uni, flat, ThresholdId::KDE, 20);
  EXPECT_FALSE(fb.note.empty());
  EXPECT_EQ(fb.kept, apply_threshold(uni, flat, ThresholdId::Q75, 20).kept);
}

TEST(Thresholds, RankBasedRules) {
  const std::vector<ScoredFeatures> runs{run({4, 3, 2, 1}), run({4, 1, 2, 3}), run({4, 3, 1, 2})};
  const auto agg = aggregate(runs, AggregatorId::MEAN_SCORE);
  // normalized ranks: a 1/4 everywhere; b 2/4, 4/4, 2/4; c 3/4, 3/4, 4/4; d 4/4, 2/4, 3/4
  EXPECT_EQ(kept_names(runs, agg, ThresholdId::MEDRANK, 4), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(kept_names(runs, agg, ThresholdId::FREQ_HALF, 4), (std::vector<std::string>{"a", "b"}));
  // a: rho = 0.25^3, p = 3 * 0.25^3 = 0.047; b: sorted ranks .5 .5 1 give p well above 0.05
  EXPECT_EQ(kept_names(runs, agg, ThresholdId::RRA_P, 4), (std::vector<std::string>{"a"}));
}

TEST(Thresholds, NeverSelectedFeaturesAreDropped) {
  // sparse runs over 8 names: "a" always selected, the rest always zero and
  // tied at mean rank 5 -> normalized 0.625, which RRA alone would call
  // significant (p = 20 * 0.625^20 < 0.05)
  const std::vector<std::string> names{"a", "b", "c", "d", "e", "f", "g", "h"};
  std::vector<ScoredFeatures> runs;
  for (int b = 0; b < 20; ++b) runs.push_back(run({1, 0, 0, 0, 0, 0, 0, 0}, SelectorId::LASSO, names));
  EXPECT_LT(rra_pvalues(normalized_rank_lists(runs)).p_value[1], 0.05);
  const auto rra = aggregate(runs, AggregatorId::RRA);
  for (auto t : {ThresholdId::RRA_P, ThresholdId::FIX_33, ThresholdId::Q75, ThresholdId::MEDRANK})
    EXPECT_EQ(kept_names(runs, rra, t, 8), (std::vector<std::string>{"a"})) << to_string(t);
}

TEST(Ensemble, ConfigJsonRoundTrip) {
  const auto c = EnsembleConfig::from_json(
      {{"selector", {{"id", "LASSO"}}}, {"aggregator", "RRA"}, {"threshold", "Q75"}, {"n_bootstraps", 7}});
  EXPECT_EQ(c.aggregator, AggregatorId::RRA);
  EXPECT_EQ(EnsembleConfig::from_json(c.to_json()).n_bootstraps, 7);
  EXPECT_THROW(EnsembleConfig::from_json({{"selector", {{"id", "LASSO"}}}, {"threshold", "TOP"}}), ConfigError);
}
