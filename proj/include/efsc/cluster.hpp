#pragma once

// Spearman-distance complete-linkage clustering of features, a top-down
// dynamic tree cut, and per-cluster representative selection.

#include "efsc/cox.hpp"

#include <nlohmann/json.hpp>

#include <limits>

namespace efsc {

struct SpearmanResult {
  Matrix corr;
  std::vector<bool> constant;
};

/// Pearson correlation of mean-rank-transformed columns. Constant columns
/// correlate 0 with every other column and 1 with themselves.
inline SpearmanResult spearman_matrix(const Matrix& x) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (n < 3) throw std::invalid_argument("spearman_matrix needs at least 3 rows");
  if (!x.allFinite()) throw std::invalid_argument("spearman_matrix: missing or non-finite values");
  Matrix ranked(n, p);
  SpearmanResult out;
  out.constant.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto col = x.col(j);
    const std::vector<double> values(col.data(), col.data() + n);
    const auto r = average_ranks(values);
    Eigen::Map<const Vector> rv(r.data(), n);
    Vector centered = rv.array() - rv.mean();
    const double norm = centered.norm();
    out.constant[static_cast<std::size_t>(j)] = !(norm > 1e-12);
    ranked.col(j) = out.constant[static_cast<std::size_t>(j)] ? Vector::Zero(n) : Vector(centered / norm);
  }
  out.corr = ranked.transpose() * ranked;
  for (Eigen::Index j = 0; j < p; ++j) out.corr(j, j) = 1.0;
  out.corr = out.corr.cwiseMax(-1.0).cwiseMin(1.0);
  return out;
}

enum class DistanceVariant {
  correlation_rows,  // Euclidean distance between rows of the correlation matrix
  abs_correlation,   // 1 - |rho_ij|
};

inline Matrix feature_distance_matrix(const Matrix& corr, DistanceVariant variant = DistanceVariant::correlation_rows) {
  const Eigen::Index p = corr.rows();
  Matrix d = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j) {
      const double v = variant == DistanceVariant::correlation_rows ? (corr.row(i) - corr.row(j)).norm()
                                                                    : 1.0 - std::abs(corr(i, j));
      d(i, j) = d(j, i) = v;
    }
  return d;
}

// ---------------------------------------------------------------------------

struct Merge {
  int left = 0;   // node ids: leaves 1..p, internal p+1..2p-1 in merge order
  int right = 0;
  double height = 0.0;
};

struct Dendrogram {
  std::size_t n_leaves = 0;
  std::vector<Merge> merges;
};

/// Naive O(p^3) complete linkage. Equal distances resolve to the pair with
/// the smallest (left id, right id), left being the smaller id.
inline Dendrogram agglomerate_complete(const Matrix& dist) {
  const auto p = static_cast<std::size_t>(dist.rows());
  if (dist.rows() != dist.cols()) throw std::invalid_argument("distance matrix must be square");
  Dendrogram tree;
  tree.n_leaves = p;
  if (p <= 1) return tree;
  // cluster-level distances indexed by slot; slot i holds node id ids[i]
  Matrix d = dist;
  std::vector<int> ids(p);
  std::iota(ids.begin(), ids.end(), 1);
  std::vector<char> alive(p, 1);
  for (std::size_t step = 0; step + 1 < p; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    std::pair<int, int> best_ids{std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
    for (std::size_t i = 0; i < p; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < p; ++j) {
        if (!alive[j]) continue;
        const double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const std::pair<int, int> key = std::minmax(ids[i], ids[j]);
        if (v < best || (v == best && key < best_ids)) {
          best = v;
          best_ids = key;
          bi = i;
          bj = j;
        }
      }
    }
    tree.merges.push_back({best_ids.first, best_ids.second, best});
    for (std::size_t k = 0; k < p; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double v = std::max(d(static_cast<Eigen::Index>(bi), static_cast<Eigen::Index>(k)),
                                d(static_cast<Eigen::Index>(bj), static_cast<Eigen::Index>(k)));
      d(static_cast<Eigen::Index>(bi), static_cast<Eigen::Index>(k)) = v;
      d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(bi)) = v;
    }
    alive[bj] = 0;
    ids[bi] = static_cast<int>(p + step + 1);
  }
  return tree;
}

// ---------------------------------------------------------------------------

struct ClusterAssignment {
  std::vector<int> labels;       // per feature, cluster id 1..n_clusters
  std::vector<bool> promoted;    // feature left over by the cut and promoted to a singleton
  std::vector<std::size_t> representatives;  // per cluster (index label-1), a feature index
  std::size_t min_cluster_size = 0;

  std::size_t n_clusters() const {
    return labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()));
  }
  std::vector<std::size_t> members(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[j] == label) out.push_back(j);
    return out;
  }
};

struct TreeCutParams {
  std::size_t min_size = 3;
  double tau = 0.99;  // merges above tau * root height are cut first
  double gap = 0.5;   // a branch is a cluster when its height <= gap * height of the merge above it
};

/// Top-down dynamic cut.
///  1. Merges higher than tau * root height are removed; the subtrees left
///     are the initial branches.
///  2. A branch with fewer than min_size leaves becomes singletons.
///  3. Otherwise, if its top height is at most gap times the height of the
///     merge it was detached from, it is a cluster.
///  4. Otherwise it is split at its top merge and both children recurse.
/// Clusters are labelled in order of their smallest leaf; promoted
/// singletons follow in leaf order.
inline ClusterAssignment dynamic_tree_cut(const Dendrogram& tree, const TreeCutParams& params = {}) {
  if (params.min_size < 2) throw std::invalid_argument("dynamic_tree_cut: min_size must be >= 2");
  if (!(params.tau > 0.0 && params.tau < 1.0)) throw std::invalid_argument("dynamic_tree_cut: tau must lie in (0,1)");
  const std::size_t p = tree.n_leaves;
  ClusterAssignment out;
  out.min_cluster_size = params.min_size;
  out.labels.assign(p, 0);
  out.promoted.assign(p, false);
  if (p == 0) return out;
  if (tree.merges.size() + 1 != p) throw std::invalid_argument("dendrogram must hold p-1 merges");

  const std::size_t total = 2 * p - 1;
  std::vector<int> left(total + 1, 0), right(total + 1, 0);
  std::vector<double> height(total + 1, 0.0);
  std::vector<std::size_t> size(total + 1, 1);
  for (std::size_t k = 0; k < tree.merges.size(); ++k) {
    const std::size_t id = p + k + 1;
    left[id] = tree.merges[k].left;
    right[id] = tree.merges[k].right;
    height[id] = tree.merges[k].height;
    size[id] = size[static_cast<std::size_t>(left[id])] + size[static_cast<std::size_t>(right[id])];
  }
  auto leaves_of = [&](int node) {
    std::vector<std::size_t> leaves;
    std::vector<int> stack{node};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      if (static_cast<std::size_t>(v) <= p) leaves.push_back(static_cast<std::size_t>(v) - 1);
      else {
        stack.push_back(left[static_cast<std::size_t>(v)]);
        stack.push_back(right[static_cast<std::size_t>(v)]);
      }
    }
    return leaves;
  };

  const int root = static_cast<int>(total);
  const double root_height = height[total];
  const double cut = params.tau * root_height;
  std::vector<std::pair<int, double>> branches;  // (node, height of the merge above it)
  std::vector<std::pair<int, double>> stack{{root, std::numeric_limits<double>::infinity()}};
  while (!stack.empty()) {
    auto [v, above] = stack.back();
    stack.pop_back();
    const auto vi = static_cast<std::size_t>(v);
    if (vi > p && height[vi] > cut) {
      stack.push_back({right[vi], height[vi]});
      stack.push_back({left[vi], height[vi]});
    } else {
      branches.push_back({v, above});
    }
  }

  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> singletons;
  while (!branches.empty()) {
    auto [v, above] = branches.back();
    branches.pop_back();
    const auto vi = static_cast<std::size_t>(v);
    if (size[vi] < params.min_size) {
      for (std::size_t leaf : leaves_of(v)) singletons.push_back(leaf);
    } else if (height[vi] <= params.gap * above) {
      clusters.push_back(leaves_of(v));
    } else {
      branches.push_back({right[vi], height[vi]});
      branches.push_back({left[vi], height[vi]});
    }
  }
  for (auto& c : clusters) std::sort(c.begin(), c.end());
  std::sort(clusters.begin(), clusters.end());
  std::sort(singletons.begin(), singletons.end());
  int label = 0;
  for (const auto& c : clusters) {
    ++label;
    for (std::size_t leaf : c) out.labels[leaf] = label;
  }
  for (std::size_t leaf : singletons) {
    out.labels[leaf] = ++label;
    out.promoted[leaf] = true;
  }
  return out;
}

/// Representative = highest score in each cluster; ties go to the
/// lexicographically smallest feature name.
inline ClusterAssignment pick_representatives(ClusterAssignment assignment, std::span<const double> scores,
                                              std::span<const std::string> names) {
  if (scores.size() != assignment.labels.size() || names.size() != scores.size())
    throw std::invalid_argument("pick_representatives: scores must cover all features");
  const std::size_t k = assignment.n_clusters();
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  assignment.representatives.assign(k, none);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    auto& rep = assignment.representatives[static_cast<std::size_t>(assignment.labels[j] - 1)];
    if (rep == none || scores[j] > scores[rep] || (scores[j] == scores[rep] && names[j] < names[rep])) rep = j;
  }
  return assignment;
}

// ---------------------------------------------------------------------------

struct ClusterParams {
  TreeCutParams cut;
  DistanceVariant distance = DistanceVariant::correlation_rows;

  static ClusterParams from_json(const nlohmann::json& j) {
    ClusterParams c;
    c.cut.tau = j.value("tau", c.cut.tau);
    c.cut.min_size = j.value("min_size", c.cut.min_size);
    c.cut.gap = j.value("gap", c.cut.gap);
    const std::string variant = j.value("distance", std::string("correlation_rows"));
    if (variant == "correlation_rows") c.distance = DistanceVariant::correlation_rows;
    else if (variant == "abs_correlation") c.distance = DistanceVariant::abs_correlation;
    else throw ConfigError("unknown distance variant: " + variant);
    return c;
  }
  nlohmann::json to_json() const {
    return {{"tau", cut.tau},
            {"min_size", cut.min_size},
            {"gap", cut.gap},
            {"distance", distance == DistanceVariant::correlation_rows ? "correlation_rows" : "abs_correlation"}};
  }
};

struct ClusterResult {
  SpearmanResult spearman;
  Dendrogram dendrogram;
  ClusterAssignment assignment;
  std::vector<double> uni_scores;
  std::vector<std::string> feature_names;

  std::vector<std::size_t> representative_columns() const {
    auto reps = assignment.representatives;
    std::sort(reps.begin(), reps.end());
    return reps;
  }

  nlohmann::json to_json() const {
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& m : dendrogram.merges) merges.push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}});
    nlohmann::json clusters = nlohmann::json::array();
    for (std::size_t c = 0; c < assignment.n_clusters(); ++c) {
      nlohmann::json members = nlohmann::json::array();
      for (std::size_t j : assignment.members(static_cast<int>(c + 1))) members.push_back(feature_names[j]);
      clusters.push_back({{"label", c + 1},
                          {"members", members},
                          {"representative", feature_names[assignment.representatives[c]]},
                          {"promoted_singleton", assignment.promoted[assignment.representatives[c]]}});
    }
    return {{"features", feature_names},        {"merges", merges},
            {"labels", assignment.labels},      {"min_cluster_size", assignment.min_cluster_size},
            {"univariate_scores", uni_scores}, {"clusters", clusters}};
  }
};

/// Whole-dataset clustering pre-step on imputed data: Spearman distance,
/// complete linkage, dynamic cut, then the best univariate Cox feature per
/// cluster.
inline ClusterResult cluster_features(const SurvivalDataset& imputed, const ClusterParams& params = {}) {
  if (imputed.has_missing()) throw std::invalid_argument("cluster_features needs imputed data");
  ClusterResult out;
  out.feature_names = imputed.feature_names;
  out.spearman = spearman_matrix(imputed.features);
  out.dendrogram = agglomerate_complete(feature_distance_matrix(out.spearman.corr, params.distance));
  const Outcome y = imputed.outcome();
  const RiskSets rs(y);
  const SurvivalDataset scaled = normalize(imputed).first;
  for (Eigen::Index j = 0; j < scaled.features.cols(); ++j) {
    const auto col = scaled.features.col(j);
    out.uni_scores.push_back(
        fit_univariate_cox(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), rs, y).score);
  }
  out.assignment = pick_representatives(dynamic_tree_cut(out.dendrogram, params.cut), out.uni_scores, out.feature_names);
  return out;
}

}  // namespace efsc
