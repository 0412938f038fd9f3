#pragma once

// Relative weighted consistency of a system of feature subsets, evaluation
// points (stability, accuracy, distance from origin) and consensus features.

#include "efsc/common.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace efsc {

struct SubsetSystem {
  std::vector<std::vector<std::string>> subsets;
  std::size_t universe_size = 0;
  std::optional<std::set<std::string>> universe;  // checked when present
};

struct StabilityResult {
  double value = 0.0;
  bool degenerate = false;  // CW_max == CW_min (includes the all-empty system)
};

namespace detail {

/// CW of a frequency profile: sum_f (F_f / N) * (F_f - 1) / (n - 1).
inline double weighted_consistency(const std::vector<std::size_t>& freq, std::size_t n_subsets) {
  std::size_t total = 0;
  for (auto f : freq) total += f;
  if (total == 0) return 0.0;
  double cw = 0.0;
  for (auto f : freq)
    if (f > 0) cw += static_cast<double>(f) / total * (static_cast<double>(f) - 1.0) / (static_cast<double>(n_subsets) - 1.0);
  return cw;
}

/// N occurrences spread as evenly as possible over d features.
inline std::vector<std::size_t> spread_profile(std::size_t total, std::size_t d) {
  std::vector<std::size_t> freq(d, total / d);
  for (std::size_t k = 0; k < total % d; ++k) ++freq[k];
  return freq;
}

/// N occurrences packed onto as few features as possible (each at most n).
inline std::vector<std::size_t> packed_profile(std::size_t total, std::size_t n_subsets) {
  std::vector<std::size_t> freq(total / n_subsets, n_subsets);
  if (total % n_subsets) freq.push_back(total % n_subsets);
  return freq;
}

}  // namespace detail

/// (CW - CW_min) / (CW_max - CW_min), with both bounds built from the
/// extreme frequency profiles for the same N, n and d. Returns 1 flagged
/// degenerate when the bounds coincide.
inline StabilityResult relative_weighted_consistency(const SubsetSystem& system) {
  const std::size_t n = system.subsets.size();
  if (n < 2) throw std::invalid_argument("relative_weighted_consistency needs at least two subsets");
  std::map<std::string, std::size_t> freq_map;
  for (const auto& s : system.subsets) {
    std::set<std::string> unique(s.begin(), s.end());
    for (const auto& f : unique) {
      if (system.universe && !system.universe->count(f)) throw std::invalid_argument("feature outside universe: " + f);
      ++freq_map[f];
    }
  }
  const std::size_t d = std::max(system.universe_size, freq_map.size());
  if (d == 0) throw std::invalid_argument("universe must hold at least one feature");
  if (system.universe_size < freq_map.size())
    throw std::invalid_argument("subsets use more distinct features than the universe holds");
  std::vector<std::size_t> freq;
  std::size_t total = 0;
  for (const auto& [_, f] : freq_map) {
    freq.push_back(f);
    total += f;
  }
  StabilityResult out;
  const double cw = detail::weighted_consistency(freq, n);
  const double cw_min = detail::weighted_consistency(detail::spread_profile(total, d), n);
  const double cw_max = detail::weighted_consistency(detail::packed_profile(std::max<std::size_t>(total, 1), n), n);
  if (total == 0 || !(cw_max - cw_min > 1e-15)) {
    out.value = 1.0;
    out.degenerate = true;
    return out;
  }
  out.value = std::clamp((cw - cw_min) / (cw_max - cw_min), 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------

struct EvaluationPoint {
  std::string config_id;
  double stability = 0.0;
  double mean_cindex = 0.0;
  double distance = 0.0;
  double mean_subset_size = 0.0;
  bool degenerate = false;
};

inline double distance_from_origin(double stability, double cindex) {
  return std::sqrt(stability * stability + cindex * cindex);
}

inline EvaluationPoint evaluate_configuration(std::string config_id,
                                              const std::vector<std::vector<std::string>>& subsets,
                                              std::span<const double> cindices, std::size_t universe_size) {
  if (subsets.size() != cindices.size())
    throw std::invalid_argument("evaluate_configuration: subset and C-index counts differ");
  EvaluationPoint pt;
  pt.config_id = std::move(config_id);
  const auto stab = relative_weighted_consistency({subsets, universe_size, std::nullopt});
  pt.stability = stab.value;
  pt.degenerate = stab.degenerate;
  double sum = 0.0, size_sum = 0.0;
  for (double c : cindices) sum += c;
  for (const auto& s : subsets) size_sum += static_cast<double>(s.size());
  pt.mean_cindex = sum / static_cast<double>(cindices.size());
  pt.mean_subset_size = size_sum / static_cast<double>(subsets.size());
  pt.distance = distance_from_origin(pt.stability, pt.mean_cindex);
  return pt;
}

/// Features appearing in more than half of a configuration's fold subsets.
inline std::set<std::string> majority_features(const std::vector<std::vector<std::string>>& fold_subsets) {
  std::map<std::string, std::size_t> count;
  for (const auto& s : fold_subsets)
    for (const auto& f : std::set<std::string>(s.begin(), s.end())) ++count[f];
  std::set<std::string> out;
  for (const auto& [f, c] : count)
    if (2 * c > fold_subsets.size()) out.insert(f);
  return out;
}

struct ConsensusResult {
  std::vector<std::string> features;
  std::vector<std::string> top_configs;
  std::size_t votes_needed = 0;
  bool fewer_than_top_k = false;
};

/// Features held (by majority over folds) by at least ceil(k / 2) of the
/// top k = min(top_k, #configs) configurations ranked by distance; equal
/// distances rank by id.
inline ConsensusResult consensus_features(const std::vector<EvaluationPoint>& points,
                                          const std::map<std::string, std::vector<std::vector<std::string>>>& subsets,
                                          std::size_t top_k = 10) {
  std::vector<const EvaluationPoint*> ranked;
  for (const auto& p : points) ranked.push_back(&p);
  std::stable_sort(ranked.begin(), ranked.end(), [](const EvaluationPoint* a, const EvaluationPoint* b) {
    if (a->distance != b->distance) return a->distance > b->distance;
    return a->config_id < b->config_id;
  });
  ConsensusResult out;
  out.fewer_than_top_k = ranked.size() < top_k;
  const std::size_t k = std::min(top_k, ranked.size());
  out.votes_needed = (k + 1) / 2;
  std::map<std::string, std::size_t> votes;
  for (std::size_t i = 0; i < k; ++i) {
    out.top_configs.push_back(ranked[i]->config_id);
    const auto it = subsets.find(ranked[i]->config_id);
    if (it == subsets.end()) throw std::invalid_argument("consensus: no subsets for " + ranked[i]->config_id);
    for (const auto& f : majority_features(it->second)) ++votes[f];
  }
  for (const auto& [f, v] : votes)
    if (v >= out.votes_needed) out.features.push_back(f);
  return out;
}

}  // namespace efsc
