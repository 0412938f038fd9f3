#pragma once

// Homogeneous bootstrap ensembles: resample, score with one base selector,
// aggregate the per-bootstrap score vectors, cut with a threshold.

#include "efsc/selectors.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <nlohmann/json.hpp>

namespace efsc {

enum class AggregatorId { MEAN_SCORE, MEDIAN_RANK, FREQ, RRA };
enum class ThresholdId { FIX_10, FIX_25, FIX_33, Q75, BEST_PROBE, KDE, MEDRANK, RRA_P, FREQ_HALF };

inline constexpr std::array<AggregatorId, 4> kAllAggregators = {AggregatorId::MEAN_SCORE, AggregatorId::MEDIAN_RANK,
                                                                AggregatorId::FREQ, AggregatorId::RRA};
inline constexpr std::array<ThresholdId, 9> kAllThresholds = {
    ThresholdId::FIX_10, ThresholdId::FIX_25,  ThresholdId::FIX_33, ThresholdId::Q75,      ThresholdId::BEST_PROBE,
    ThresholdId::KDE,    ThresholdId::MEDRANK, ThresholdId::RRA_P,  ThresholdId::FREQ_HALF};

inline std::string_view to_string(AggregatorId id) {
  switch (id) {
    case AggregatorId::MEAN_SCORE: return "MEAN_SCORE";
    case AggregatorId::MEDIAN_RANK: return "MEDIAN_RANK";
    case AggregatorId::FREQ: return "FREQ";
    case AggregatorId::RRA: return "RRA";
  }
  return "?";
}

inline std::string_view to_string(ThresholdId id) {
  switch (id) {
    case ThresholdId::FIX_10: return "FIX_10";
    case ThresholdId::FIX_25: return "FIX_25";
    case ThresholdId::FIX_33: return "FIX_33";
    case ThresholdId::Q75: return "Q75";
    case ThresholdId::BEST_PROBE: return "BEST_PROBE";
    case ThresholdId::KDE: return "KDE";
    case ThresholdId::MEDRANK: return "MEDRANK";
    case ThresholdId::RRA_P: return "RRA_P";
    case ThresholdId::FREQ_HALF: return "FREQ_HALF";
  }
  return "?";
}

inline AggregatorId aggregator_from_string(std::string_view s) {
  for (auto id : kAllAggregators)
    if (to_string(id) == s) return id;
  throw ConfigError("unknown aggregator: " + std::string(s));
}

inline ThresholdId threshold_from_string(std::string_view s) {
  for (auto id : kAllThresholds)
    if (to_string(id) == s) return id;
  throw ConfigError("unknown threshold: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Bootstrap

/// n row indices drawn with replacement, deterministic in (seed, index). A
/// draw without events is rejected and redrawn (at most 100 times).
inline std::vector<std::size_t> bootstrap_rows(std::span<const int> event, std::size_t index, std::uint64_t seed) {
  const std::size_t n = event.size();
  if (n < 2) throw DataError("bootstrap needs at least 2 subjects");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, index, attempt));
    std::vector<std::size_t> rows(n);
    bool has_event = false;
    for (auto& r : rows) {
      r = uniform_index(rng, n);
      has_event = has_event || event[r] == 1;
    }
    if (has_event) return rows;
  }
  throw DataError("bootstrap: 100 consecutive resamples without events");
}

inline SurvivalDataset bootstrap_sample(const SurvivalDataset& data, std::size_t index, std::uint64_t seed) {
  const auto rows = bootstrap_rows(data.event, index, seed);
  return subset_rows(data, rows);
}

// ---------------------------------------------------------------------------
// Aggregation

namespace detail {

inline void check_universe(std::span<const ScoredFeatures> runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  for (const auto& r : runs)
    if (r.names != runs.front().names) throw std::invalid_argument("aggregate: runs have different name universes");
}

/// Selection event used by FREQ: sparse selectors select natively, filters
/// "select" a feature ranked in the top half (rank <= m/2).
inline bool selection_event(const ScoredFeatures& run, std::size_t j) {
  if (is_sparse(run.selector)) return run.selected[j];
  return run.ranks[j] <= 0.5 * static_cast<double>(run.size());
}

}  // namespace detail

struct RraResult {
  std::vector<double> rho;
  std::vector<double> p_value;
};

/// Robust rank aggregation. rank_lists[b][j] is the normalized rank in (0,1]
/// of name j in list b. For each name the sorted ranks r(1)..r(n) give
/// rho = min_k BetaCDF(r(k); k, n-k+1) and p = min(1, n * rho).
inline RraResult rra_pvalues(const std::vector<std::vector<double>>& rank_lists) {
  RraResult out;
  if (rank_lists.empty()) return out;
  const std::size_t n = rank_lists.size(), m = rank_lists.front().size();
  out.rho.resize(m);
  out.p_value.resize(m);
  std::vector<double> r(n);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t b = 0; b < n; ++b) r[b] = std::clamp(rank_lists[b].at(j), 0.0, 1.0);
    std::sort(r.begin(), r.end());
    double rho = 1.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double cdf = boost::math::ibeta(static_cast<double>(k), static_cast<double>(n - k + 1), r[k - 1]);
      rho = std::min(rho, cdf);
    }
    out.rho[j] = rho;
    out.p_value[j] = std::min(1.0, rho * static_cast<double>(n));
  }
  return out;
}

inline std::vector<std::vector<double>> normalized_rank_lists(std::span<const ScoredFeatures> runs) {
  std::vector<std::vector<double>> lists;
  for (const auto& run : runs) {
    std::vector<double> r = run.ranks;
    for (auto& v : r) v /= static_cast<double>(run.size());
    lists.push_back(std::move(r));
  }
  return lists;
}

/// Per-name aggregated statistic; larger always means more important.
inline std::vector<double> aggregate(std::span<const ScoredFeatures> runs, AggregatorId method) {
  detail::check_universe(runs);
  const std::size_t m = runs.front().size();
  const auto n = static_cast<double>(runs.size());
  std::vector<double> out(m, 0.0);
  switch (method) {
    case AggregatorId::MEAN_SCORE:
      for (const auto& r : runs)
        for (std::size_t j = 0; j < m; ++j) out[j] += r.scores[j] / n;
      break;
    case AggregatorId::MEDIAN_RANK: {
      std::vector<double> ranks(runs.size());
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t b = 0; b < runs.size(); ++b) ranks[b] = runs[b].ranks[j];
        out[j] = (static_cast<double>(m) - median(ranks) + 1.0) / static_cast<double>(m);
      }
      break;
    }
    case AggregatorId::FREQ:
      for (const auto& r : runs)
        for (std::size_t j = 0; j < m; ++j) out[j] += detail::selection_event(r, j) ? 1.0 / n : 0.0;
      break;
    case AggregatorId::RRA: {
      const auto rra = rra_pvalues(normalized_rank_lists(runs));
      for (std::size_t j = 0; j < m; ++j) out[j] = 1.0 - rra.rho[j];
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholds

struct ThresholdResult {
  std::vector<std::size_t> kept;  // indices into the name universe (real features only)
  double threshold_value = 0.0;
  std::string note;
};

namespace detail {

inline std::vector<std::size_t> keep_above(std::span<const double> agg, const std::vector<std::size_t>& real,
                                           double cut, bool inclusive) {
  std::vector<std::size_t> kept;
  for (std::size_t j : real)
    if (inclusive ? agg[j] >= cut : agg[j] > cut) kept.push_back(j);
  return kept;
}

/// Cut at the deepest interior valley of a Gaussian KDE (Silverman
/// bandwidth, 512-point grid over the score range); NaN when unimodal.
inline double kde_valley(const std::vector<double>& values) {
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  if (!(hi > lo) || values.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  const double count = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v / count;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean) / (count - 1.0);
  const double iqr = quantile(values, 0.75) - quantile(values, 0.25);
  double spread = std::sqrt(var);
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  const double bw = 0.9 * spread * std::pow(count, -0.2);
  if (!(bw > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  constexpr int kGrid = 512;
  std::vector<double> grid(kGrid), density(kGrid, 0.0);
  for (int g = 0; g < kGrid; ++g) {
    grid[static_cast<std::size_t>(g)] = lo + (hi - lo) * g / (kGrid - 1);
    for (double v : values) {
      const double z = (grid[static_cast<std::size_t>(g)] - v) / bw;
      density[static_cast<std::size_t>(g)] += std::exp(-0.5 * z * z);
    }
  }
  double cut = std::numeric_limits<double>::quiet_NaN(), deepest = std::numeric_limits<double>::infinity();
  for (std::size_t g = 1; g + 1 < grid.size(); ++g)
    if (density[g] < density[g - 1] && density[g] < density[g + 1] && density[g] < deepest) {
      deepest = density[g];
      cut = grid[g];
    }
  return cut;
}

}  // namespace detail

/// Applies one threshold rule to aggregated scores. Probe names are never
/// returned; ties at a cut are kept. No rule keeps a feature scored zero in
/// every run (under mean ranks those tie in one block that rank-based rules
/// would otherwise take wholesale), and fixed-fraction and quantile-type
/// cuts also drop a zero aggregated score.
inline ThresholdResult apply_threshold(std::span<const ScoredFeatures> runs, std::span<const double> aggregated,
                                       ThresholdId method, std::size_t p_total) {
  detail::check_universe(runs);
  const auto& names = runs.front().names;
  if (aggregated.size() != names.size()) throw std::invalid_argument("apply_threshold: score/name length mismatch");
  for (double v : aggregated)
    if (!std::isfinite(v)) throw std::invalid_argument("apply_threshold: non-finite aggregated score");
  std::vector<std::size_t> real, probes;
  for (std::size_t j = 0; j < names.size(); ++j) (is_probe_name(names[j]) ? probes : real).push_back(j);
  ThresholdResult out;
  if (real.empty()) return out;
  std::vector<double> real_scores;
  for (std::size_t j : real) real_scores.push_back(aggregated[j]);

  auto positive = [&](std::vector<std::size_t> kept) {
    std::erase_if(kept, [&](std::size_t j) { return !(aggregated[j] > 0.0); });
    return kept;
  };
  auto q75 = [&] {
    out.threshold_value = quantile(real_scores, 0.75);
    out.kept = positive(detail::keep_above(aggregated, real, out.threshold_value, false));
  };

  switch (method) {
    case ThresholdId::FIX_10:
    case ThresholdId::FIX_25:
    case ThresholdId::FIX_33: {
      const double frac = method == ThresholdId::FIX_10 ? 0.10 : method == ThresholdId::FIX_25 ? 0.25 : 0.33;
      const auto k = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(p_total) - 1e-9));
      if (k == 0) {
        out.threshold_value = std::numeric_limits<double>::infinity();
        break;
      }
      std::vector<double> sorted = real_scores;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      out.threshold_value = sorted[std::min(k, sorted.size()) - 1];
      out.kept = positive(detail::keep_above(aggregated, real, out.threshold_value, true));
      break;
    }
    case ThresholdId::Q75: q75(); break;
    case ThresholdId::BEST_PROBE: {
      if (probes.empty()) throw std::invalid_argument("BEST_PROBE threshold needs probes");
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j : probes) best = std::max(best, aggregated[j]);
      out.threshold_value = best;
      out.kept = detail::keep_above(aggregated, real, best, false);
      break;
    }
    case ThresholdId::KDE: {
      const double cut = detail::kde_valley(real_scores);
      if (std::isnan(cut)) {
        q75();
        out.note = "unimodal score density; fell back to Q75";
      } else {
        out.threshold_value = cut;
        out.kept = positive(detail::keep_above(aggregated, real, cut, false));
      }
      break;
    }
    case ThresholdId::MEDRANK: {
      out.threshold_value = 0.5;
      std::vector<double> r(runs.size());
      for (std::size_t j : real) {
        for (std::size_t b = 0; b < runs.size(); ++b) r[b] = runs[b].ranks[j] / static_cast<double>(runs[b].size());
        if (median(r) <= 0.5) out.kept.push_back(j);
      }
      break;
    }
    case ThresholdId::RRA_P: {
      out.threshold_value = 0.05;
      const auto rra = rra_pvalues(normalized_rank_lists(runs));
      for (std::size_t j : real)
        if (rra.p_value[j] < 0.05) out.kept.push_back(j);
      break;
    }
    case ThresholdId::FREQ_HALF: {
      out.threshold_value = 0.5;
      const auto freq = aggregate(runs, AggregatorId::FREQ);
      for (std::size_t j : real)
        if (freq[j] >= 0.5) out.kept.push_back(j);
      break;
    }
  }
  std::erase_if(out.kept, [&](std::size_t j) {
    return std::all_of(runs.begin(), runs.end(), [&](const ScoredFeatures& r) { return !(r.scores[j] > 0.0); });
  });
  return out;
}

// ---------------------------------------------------------------------------

struct EnsembleConfig {
  SelectorConfig selector;
  int n_bootstraps = 50;
  AggregatorId aggregator = AggregatorId::MEAN_SCORE;
  ThresholdId threshold = ThresholdId::FIX_10;
  std::uint64_t seed = 0;

  static EnsembleConfig from_json(const nlohmann::json& j) {
    EnsembleConfig c;
    try {
      c.selector = SelectorConfig::from_json(j.at("selector"));
      c.n_bootstraps = j.value("n_bootstraps", c.n_bootstraps);
      c.aggregator = aggregator_from_string(j.value("aggregator", std::string("MEAN_SCORE")));
      c.threshold = threshold_from_string(j.value("threshold", std::string("FIX_10")));
      c.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid ensemble config: ") + e.what());
    }
    if (c.n_bootstraps < 1) throw ConfigError("n_bootstraps must be >= 1");
    return c;
  }
  nlohmann::json to_json() const {
    return {{"selector", selector.to_json()},
            {"n_bootstraps", n_bootstraps},
            {"aggregator", std::string(to_string(aggregator))},
            {"threshold", std::string(to_string(threshold))},
            {"seed", seed}};
  }
};

struct EnsembleResult {
  EnsembleConfig config;
  std::vector<std::string> names;
  std::vector<double> aggregated;
  std::vector<ScoredFeatures> per_bootstrap;
  std::vector<std::string> final_subset;
  double threshold_value = 0.0;
  std::string note;

  nlohmann::json to_json() const {
    nlohmann::json scores = nlohmann::json::object();
    for (std::size_t j = 0; j < names.size(); ++j) scores[names[j]] = aggregated[j];
    nlohmann::json j{{"config", config.to_json()},
                     {"aggregated", scores},
                     {"threshold_value", threshold_value},
                     {"final_subset", final_subset}};
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

/// Runs the base selector on `n_bootstraps` resamples of the training data.
/// Resample b uses seed derive_seed(seed, b); the selector gets
/// derive_seed(seed, b, 1). Probe columns are resampled with their rows.
inline std::vector<ScoredFeatures> run_bootstraps(const SurvivalDataset& train, const ProbeSet& probes,
                                                  const SelectorConfig& selector, int n_bootstraps,
                                                  std::uint64_t seed) {
  std::vector<ScoredFeatures> runs;
  runs.reserve(static_cast<std::size_t>(n_bootstraps));
  for (int b = 0; b < n_bootstraps; ++b) {
    const auto bseed = derive_seed(seed, b);
    const auto rows = bootstrap_rows(train.event, static_cast<std::size_t>(b), bseed);
    runs.push_back(run_selector(selector, subset_rows(train, rows), subset_rows(probes, rows), derive_seed(seed, b, 1)));
  }
  return runs;
}

/// Aggregate + threshold over precomputed bootstrap runs.
inline EnsembleResult finalize_ensemble(const EnsembleConfig& config, std::vector<ScoredFeatures> runs,
                                        std::size_t p_total) {
  EnsembleResult out;
  out.config = config;
  out.aggregated = aggregate(runs, config.aggregator);
  const auto cut = apply_threshold(runs, out.aggregated, config.threshold, p_total);
  out.names = runs.front().names;
  for (std::size_t j : cut.kept) out.final_subset.push_back(out.names[j]);
  std::sort(out.final_subset.begin(), out.final_subset.end());
  out.threshold_value = cut.threshold_value;
  out.note = cut.note;
  out.per_bootstrap = std::move(runs);
  return out;
}

inline EnsembleResult run_ensemble(const SurvivalDataset& train, const ProbeSet& probes, const EnsembleConfig& config) {
  auto runs = run_bootstraps(train, probes, config.selector, config.n_bootstraps, config.seed);
  return finalize_ensemble(config, std::move(runs), train.p());
}

}  // namespace efsc
