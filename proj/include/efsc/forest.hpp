#pragma once

// Random survival forest with log-rank splitting and out-of-bag permutation
// importance.
//
// Each tree grows on a bootstrap of the rows; at every node `mtry` candidate
// features are drawn and up to `n_split` random cut points per feature are
// scored by the two-sample log-rank statistic. Leaves predict the ensemble
// mortality (sum of the leaf Nelson-Aalen cumulative hazard over the tree's
// event times). Bootstraps are drawn by row index, so scores are
// deterministic for a fixed (seed, row order) but a row permutation yields a
// different, equally valid forest.

#include "efsc/cox.hpp"

namespace efsc {

struct ForestParams {
  int n_trees = 100;
  int mtry = 0;  // 0: floor(sqrt(m))
  int min_node = 5;
  int n_split = 10;
};

struct ForestImportance {
  std::vector<double> importance;
  int trees_with_splits = 0;
  bool degenerate = false;  // no tree could split
};

namespace detail {

struct TreeNode {
  int feature = -1;
  double cut = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
};

class SurvivalTree {
 public:
  SurvivalTree(const Matrix& x, Outcome y, std::vector<std::size_t> rows, const ForestParams& params, Rng& rng)
      : x_(x), y_(y), params_(params), rng_(rng) {
    for (std::size_t r : rows)
      if (y.event[r] == 1) event_times_.push_back(y.time[r]);
    std::sort(event_times_.begin(), event_times_.end());
    event_times_.erase(std::unique(event_times_.begin(), event_times_.end()), event_times_.end());
    mtry_ = params.mtry > 0 ? params.mtry
                            : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(x.cols())))));
    mtry_ = std::min<int>(mtry_, static_cast<int>(x.cols()));
    // children inherit this order, so every node sees its rows sorted by time
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return y.time[a] < y.time[b]; });
    grow(std::move(rows));
  }

  double predict_row(const Matrix& x, Eigen::Index row, int permuted_feature = -1, Eigen::Index permuted_row = -1) const {
    int node = 0;
    while (nodes_[static_cast<std::size_t>(node)].feature >= 0) {
      const auto& nd = nodes_[static_cast<std::size_t>(node)];
      const double v = nd.feature == permuted_feature ? x(permuted_row, nd.feature) : x(row, nd.feature);
      node = v <= nd.cut ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(node)].value;
  }

  bool has_split() const { return nodes_.size() > 1; }
  const std::vector<bool>& used_features() const { return used_; }

 private:
  int grow(std::vector<std::size_t> rows) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (used_.empty()) used_.assign(static_cast<std::size_t>(x_.cols()), false);

    const auto min_node = static_cast<std::size_t>(std::max(1, params_.min_node));
    bool any_event = false;
    for (std::size_t r : rows) any_event = any_event || y_.event[r] == 1;
    int best_feature = -1;
    double best_cut = 0.0, best_stat = 0.0;
    if (any_event && rows.size() >= 2 * min_node) {
      // tied-time groups, shared by every candidate split at this node
      std::vector<std::size_t> group_begin;
      for (std::size_t k = 0; k < rows.size(); ++k)
        if (k == 0 || y_.time[rows[k]] != y_.time[rows[k - 1]]) group_begin.push_back(k);
      group_begin.push_back(rows.size());
      std::vector<int> features(static_cast<std::size_t>(x_.cols()));
      std::iota(features.begin(), features.end(), 0);
      std::vector<double> values(rows.size());
      for (int k = 0; k < mtry_; ++k) {
        const std::size_t pick = k + uniform_index(rng_, features.size() - static_cast<std::size_t>(k));
        std::swap(features[static_cast<std::size_t>(k)], features[pick]);
        const int f = features[static_cast<std::size_t>(k)];
        for (std::size_t m = 0; m < rows.size(); ++m) values[m] = x_(static_cast<Eigen::Index>(rows[m]), f);
        // n_split cut points drawn from the node's values; the maximum would
        // leave an empty child and is skipped
        const double top = *std::max_element(values.begin(), values.end());
        std::vector<double> cuts;
        for (int s = 0; s < params_.n_split; ++s) {
          const double v = values[uniform_index(rng_, values.size())];
          if (v < top) cuts.push_back(v);
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
        if (cuts.empty()) continue;
        const auto stats = logrank(rows, group_begin, values, cuts, min_node);
        for (std::size_t c = 0; c < cuts.size(); ++c)
          if (stats[c] > best_stat) {
            best_stat = stats[c];
            best_feature = f;
            best_cut = cuts[c];
          }
      }
    }
    if (best_feature < 0) {
      nodes_[static_cast<std::size_t>(id)].value = leaf_value(rows);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) (x_(static_cast<Eigen::Index>(r), best_feature) <= best_cut ? left : right).push_back(r);
    used_[static_cast<std::size_t>(best_feature)] = true;
    nodes_[static_cast<std::size_t>(id)].feature = best_feature;
    nodes_[static_cast<std::size_t>(id)].cut = best_cut;
    const int l = grow(std::move(left));
    const int r = grow(std::move(right));
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  // Squared standardized log-rank statistics for the splits x <= cuts[c]
  // (ascending, distinct), all scored in one backward pass over the
  // tied-time groups. `rows` are sorted by ascending time and `values`
  // aligned with them.
  std::vector<double> logrank(const std::vector<std::size_t>& rows, const std::vector<std::size_t>& group_begin,
                              const std::vector<double>& values, const std::vector<double>& cuts,
                              std::size_t min_node) const {
    const std::size_t nc = cuts.size(), n = rows.size();
    // bin[m]: first cut >= value, so row m is left of cut c iff bin[m] <= c
    std::vector<std::size_t> bin(n);
    for (std::size_t m = 0; m < n; ++m) {
      std::size_t b = 0;
      while (b < nc && cuts[b] < values[m]) ++b;
      bin[m] = b;
    }
    std::vector<double> at_risk_left(nc, 0.0), num(nc, 0.0), var(nc, 0.0), d_left(nc + 1), add_left(nc + 1);
    double at_risk = 0.0;
    for (std::size_t g = group_begin.size() - 1; g-- > 0;) {
      std::fill(d_left.begin(), d_left.end(), 0.0);
      std::fill(add_left.begin(), add_left.end(), 0.0);
      double d = 0.0;
      for (std::size_t m = group_begin[g]; m < group_begin[g + 1]; ++m) {
        const double ev = y_.event[rows[m]] == 1 ? 1.0 : 0.0;
        at_risk += 1.0;
        d += ev;
        add_left[bin[m]] += 1.0;
        d_left[bin[m]] += ev;
      }
      double run_n = 0.0, run_d = 0.0;
      for (std::size_t c = 0; c < nc; ++c) {
        run_n += add_left[c];
        run_d += d_left[c];
        at_risk_left[c] += run_n;
        if (d > 0.0) {
          const double frac = at_risk_left[c] / at_risk;
          num[c] += run_d - d * frac;
          if (at_risk > 1.0) var[c] += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
        }
      }
    }
    std::vector<double> stat(nc, 0.0);
    for (std::size_t c = 0; c < nc; ++c) {
      const auto n_left = static_cast<std::size_t>(at_risk_left[c]);
      if (n_left < min_node || n - n_left < min_node) continue;
      if (var[c] > 0.0) stat[c] = num[c] * num[c] / var[c];
    }
    return stat;
  }

  double leaf_value(const std::vector<std::size_t>& rows) const {
    // mortality: sum_s (d_s / Y_s) * #{tree event times >= s}
    const std::vector<std::size_t>& sorted = rows;
    double value = 0.0;
    std::size_t k = 0;
    while (k < sorted.size()) {
      std::size_t end = k;
      double d = 0.0;
      const double t = y_.time[sorted[k]];
      while (end < sorted.size() && y_.time[sorted[end]] == t) d += y_.event[sorted[end++]] == 1;
      if (d > 0.0) {
        const double at_risk = static_cast<double>(sorted.size() - k);
        const auto later = static_cast<double>(
            event_times_.end() - std::lower_bound(event_times_.begin(), event_times_.end(), t));
        value += d / at_risk * later;
      }
      k = end;
    }
    return value;
  }

  const Matrix& x_;
  Outcome y_;
  ForestParams params_;
  Rng& rng_;
  int mtry_ = 1;
  std::vector<double> event_times_;
  std::vector<TreeNode> nodes_;
  std::vector<bool> used_;
};

}  // namespace detail

/// Permutation importance: per tree, the drop in out-of-bag C-index after
/// permuting one feature's OOB values (one permutation per tree), averaged
/// over trees with a usable OOB sample and floored at zero.
inline ForestImportance survival_forest_importance(const Matrix& x, Outcome y, const ForestParams& params,
                                                   std::uint64_t seed) {
  const std::size_t n = y.size(), m = static_cast<std::size_t>(x.cols());
  ForestImportance out;
  out.importance.assign(m, 0.0);
  if (n < 2 || m == 0) {
    out.degenerate = true;
    return out;
  }
  std::vector<double> total(m, 0.0);
  int scored_trees = 0;
  for (int t = 0; t < params.n_trees; ++t) {
    Rng rng(derive_seed(seed, t));
    std::vector<std::size_t> rows(n);
    std::vector<char> in_bag(n, 0);
    for (auto& r : rows) {
      r = uniform_index(rng, n);
      in_bag[r] = 1;
    }
    const detail::SurvivalTree tree(x, y, rows, params, rng);
    if (!tree.has_split()) continue;
    ++out.trees_with_splits;

    std::vector<std::size_t> oob;
    for (std::size_t i = 0; i < n; ++i)
      if (!in_bag[i]) oob.push_back(i);
    if (oob.size() < 2) continue;
    std::vector<double> oob_time, pred(oob.size());
    std::vector<int> oob_event;
    for (std::size_t i : oob) {
      oob_time.push_back(y.time[i]);
      oob_event.push_back(y.event[i]);
    }
    const Outcome oob_y{oob_time, oob_event};
    for (std::size_t k = 0; k < oob.size(); ++k) pred[k] = tree.predict_row(x, static_cast<Eigen::Index>(oob[k]));
    const Concordance base = concordance(pred, oob_y);
    if (base.degenerate) continue;
    ++scored_trees;
    std::vector<std::size_t> perm(oob.size());
    for (std::size_t f = 0; f < m; ++f) {
      if (!tree.used_features()[f]) continue;  // unused feature: permutation cannot change predictions
      perm = oob;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t k = 0; k < oob.size(); ++k)
        pred[k] = tree.predict_row(x, static_cast<Eigen::Index>(oob[k]), static_cast<int>(f),
                                   static_cast<Eigen::Index>(perm[k]));
      total[f] += base.value - concordance_index(pred, oob_y);
    }
  }
  out.degenerate = out.trees_with_splits == 0;
  if (scored_trees > 0)
    for (std::size_t f = 0; f < m; ++f) out.importance[f] = std::max(0.0, total[f] / scored_trees);
  return out;
}

}  // namespace efsc
