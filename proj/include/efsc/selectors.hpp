#pragma once

// The six base feature selectors. Each maps a (normalized, imputed) training
// set plus random probes to one importance score per column; probes are
// scored exactly like real features.

#include "efsc/elastic_net.hpp"
#include "efsc/forest.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <string_view>

namespace efsc {

enum class SelectorId { UNI, LASSO, ENET, GLMBOOST, COXBOOST, RSF };

inline constexpr std::array<SelectorId, 6> kAllSelectors = {SelectorId::UNI,      SelectorId::LASSO,
                                                            SelectorId::ENET,     SelectorId::GLMBOOST,
                                                            SelectorId::COXBOOST, SelectorId::RSF};

inline std::string_view to_string(SelectorId id) {
  switch (id) {
    case SelectorId::UNI: return "UNI";
    case SelectorId::LASSO: return "LASSO";
    case SelectorId::ENET: return "ENET";
    case SelectorId::GLMBOOST: return "GLMBOOST";
    case SelectorId::COXBOOST: return "COXBOOST";
    case SelectorId::RSF: return "RSF";
  }
  return "?";
}

inline SelectorId selector_from_string(std::string_view s) {
  for (SelectorId id : kAllSelectors)
    if (to_string(id) == s) return id;
  throw ConfigError("unknown selector id: " + std::string(s));
}

/// Sparse selectors return a subset natively; filters score everything.
inline bool is_sparse(SelectorId id) { return id != SelectorId::UNI && id != SelectorId::RSF; }

struct ScoredFeatures {
  std::vector<std::string> names;
  std::vector<double> scores;
  std::vector<bool> selected;
  std::vector<double> ranks;  // 1 = best, ties share the mean rank
  SelectorId selector = SelectorId::UNI;
  bool degenerate = false;

  std::size_t size() const { return names.size(); }
};

inline ScoredFeatures make_scored(std::vector<std::string> names, std::vector<double> scores, SelectorId id,
                                  std::vector<bool> selected = {}) {
  ScoredFeatures out;
  out.selector = id;
  if (selected.empty()) {
    selected.resize(scores.size());
    for (std::size_t j = 0; j < scores.size(); ++j) selected[j] = is_sparse(id) ? scores[j] > 0.0 : true;
  }
  out.ranks = descending_ranks(scores);
  out.names = std::move(names);
  out.scores = std::move(scores);
  out.selected = std::move(selected);
  return out;
}

struct SelectorParams {
  double alpha = 1.0;  // LASSO 1.0; ENET defaults to 0.5
  int path_points = 50;
  double lambda_ratio = 0.01;
  int cv_folds = 5;
  int mstop = 100;
  double nu = 0.1;
  int steps = 100;
  std::optional<double> penalty;  // COXBOOST; default 9 * events
  ForestParams forest;
};

struct SelectorConfig {
  SelectorId id = SelectorId::UNI;
  SelectorParams params;

  static SelectorConfig defaults(SelectorId id) {
    SelectorConfig c;
    c.id = id;
    if (id == SelectorId::ENET) c.params.alpha = 0.5;
    return c;
  }

  /// {"id": "ENET", "params": {"alpha": 0.5, ...}}; unknown keys are rejected.
  static SelectorConfig from_json(const nlohmann::json& j) {
    SelectorConfig c = defaults(selector_from_string(j.at("id").get<std::string>()));
    if (!j.contains("params")) return c;
    auto& p = c.params;
    for (const auto& [key, value] : j.at("params").items()) {
      if (key == "alpha") p.alpha = value.get<double>();
      else if (key == "path_points") p.path_points = value.get<int>();
      else if (key == "lambda_ratio") p.lambda_ratio = value.get<double>();
      else if (key == "cv_folds") p.cv_folds = value.get<int>();
      else if (key == "mstop") p.mstop = value.get<int>();
      else if (key == "nu") p.nu = value.get<double>();
      else if (key == "steps") p.steps = value.get<int>();
      else if (key == "penalty") p.penalty = value.get<double>();
      else if (key == "n_trees") p.forest.n_trees = value.get<int>();
      else if (key == "mtry") p.forest.mtry = value.get<int>();
      else if (key == "min_node") p.forest.min_node = value.get<int>();
      else if (key == "n_split") p.forest.n_split = value.get<int>();
      else throw ConfigError("unknown selector parameter: " + key);
    }
    if (!(p.alpha > 0.0 && p.alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (p.mstop < 0 || p.steps < 0 || p.forest.n_trees < 1) throw ConfigError("negative iteration count");
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json params;
    switch (id) {
      case SelectorId::LASSO:
      case SelectorId::ENET:
        params = {{"alpha", this->params.alpha}, {"path_points", this->params.path_points},
                  {"lambda_ratio", this->params.lambda_ratio}, {"cv_folds", this->params.cv_folds}};
        break;
      case SelectorId::GLMBOOST: params = {{"mstop", this->params.mstop}, {"nu", this->params.nu}}; break;
      case SelectorId::COXBOOST:
        params = {{"steps", this->params.steps}};
        if (this->params.penalty) params["penalty"] = *this->params.penalty;
        break;
      case SelectorId::RSF:
        params = {{"n_trees", this->params.forest.n_trees}, {"mtry", this->params.forest.mtry},
                  {"min_node", this->params.forest.min_node}, {"n_split", this->params.forest.n_split}};
        break;
      case SelectorId::UNI: params = nlohmann::json::object(); break;
    }
    return {{"id", std::string(to_string(id))}, {"params", params}};
  }
};

/// Real feature columns followed by probe columns.
struct Design {
  Matrix x;
  std::vector<std::string> names;
  std::vector<bool> constant;
  std::size_t n_real = 0;
};

inline Design build_design(const SurvivalDataset& data, const ProbeSet& probes) {
  if (data.has_missing()) throw std::invalid_argument("selectors need imputed data");
  if (probes.size() > 0 && probes.values.rows() != data.features.rows())
    throw std::invalid_argument("probe rows do not match dataset rows");
  Design d;
  d.n_real = data.p();
  d.x.resize(data.features.rows(), data.features.cols() + probes.values.cols());
  d.x.leftCols(data.features.cols()) = data.features;
  if (probes.size() > 0) d.x.rightCols(probes.values.cols()) = probes.values;
  d.names = data.feature_names;
  d.names.insert(d.names.end(), probes.names.begin(), probes.names.end());
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
    const auto col = d.x.col(j);
    d.constant.push_back(!(col.maxCoeff() > col.minCoeff()));
  }
  return d;
}

// ---------------------------------------------------------------------------

/// Univariate Cox filter: score = C-index of the single-feature fit.
inline ScoredFeatures select_uni(const SurvivalDataset& data, const ProbeSet& probes) {
  const Design d = build_design(data, probes);
  const Outcome y = data.outcome();
  const RiskSets rs(y);
  std::vector<double> scores(d.names.size());
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
    const auto col = d.x.col(j);
    scores[static_cast<std::size_t>(j)] =
        fit_univariate_cox(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), rs, y).score;
  }
  return make_scored(d.names, std::move(scores), SelectorId::UNI);
}

namespace detail {
inline ScoredFeatures penalized(const SurvivalDataset& data, const ProbeSet& probes, const SelectorParams& p,
                                SelectorId id) {
  const Design d = build_design(data, probes);
  const auto cv = cv_elastic_net_cox(d.x, data.outcome(), p.alpha, p.path_points, p.lambda_ratio, p.cv_folds);
  std::vector<double> scores(d.names.size());
  for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = std::abs(cv.fit.beta[static_cast<Eigen::Index>(j)]);
  return make_scored(d.names, std::move(scores), id);
}
}  // namespace detail

inline ScoredFeatures select_lasso(const SurvivalDataset& data, const ProbeSet& probes, SelectorParams p = {}) {
  p.alpha = 1.0;
  return detail::penalized(data, probes, p, SelectorId::LASSO);
}

inline ScoredFeatures select_enet(const SurvivalDataset& data, const ProbeSet& probes,
                                  SelectorParams p = SelectorConfig::defaults(SelectorId::ENET).params) {
  return detail::penalized(data, probes, p, SelectorId::ENET);
}

/// Coefficients of component-wise gradient boosting; exposed for tests.
inline Vector glmboost_coefficients(const Matrix& x, Outcome y, int mstop, double nu) {
  const Eigen::Index n = x.rows(), m = x.cols();
  Vector beta = Vector::Zero(m);
  if (mstop <= 0 || m == 0) return beta;
  const RiskSets rs(y);
  const Vector means = x.colwise().mean();
  Matrix centered = x.rowwise() - means.transpose();
  const Vector ss = centered.colwise().squaredNorm();
  Vector eta = Vector::Zero(n), grad;
  for (int it = 0; it < mstop; ++it) {
    rs.eta_derivatives(eta, grad);
    const Vector xu = centered.transpose() * (-grad);  // negative gradient fitted per column
    Eigen::Index best = -1;
    double best_gain = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!(ss[j] > 1e-12)) continue;
      const double gain = xu[j] * xu[j] / ss[j];
      if (gain > best_gain) {
        best_gain = gain;
        best = j;
      }
    }
    if (best < 0) break;
    const double step = nu * xu[best] / ss[best];
    beta[best] += step;
    eta.noalias() += step * centered.col(best);
  }
  return beta;
}

inline ScoredFeatures select_glmboost(const SurvivalDataset& data, const ProbeSet& probes, int mstop = 100,
                                      double nu = 0.1) {
  const Design d = build_design(data, probes);
  const Vector beta = glmboost_coefficients(d.x, data.outcome(), mstop, nu);
  std::vector<double> scores(d.names.size());
  for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = std::abs(beta[static_cast<Eigen::Index>(j)]);
  return make_scored(d.names, std::move(scores), SelectorId::GLMBOOST);
}

struct CoxBoostTrace {
  Vector beta;
  std::vector<Eigen::Index> updated;  // column chosen at each step
};

/// Likelihood-based boosting: each step applies the penalized one-step
/// Newton update U_j / (I_j + penalty) to the column maximizing
/// U_j^2 / (I_j + penalty).
inline CoxBoostTrace coxboost_fit(const Matrix& x, Outcome y, int steps, double penalty) {
  const Eigen::Index n = x.rows(), m = x.cols();
  CoxBoostTrace out;
  out.beta = Vector::Zero(m);
  if (steps <= 0 || m == 0) return out;
  const RiskSets rs(y);
  const auto& order = rs.order();
  const auto& starts = rs.group_start();
  const auto& events = rs.group_events();
  Vector eta = Vector::Zero(n), grad, weight;
  Vector s1(m), info(m);
  for (int step = 0; step < steps; ++step) {
    rs.eta_derivatives(eta, grad, nullptr, &weight);
    const Vector score = -(x.transpose() * grad);
    info = x.cwiseAbs2().transpose() * weight;
    const double shift = eta.maxCoeff();
    s1.setZero();
    double s0 = 0.0;
    for (std::size_t g = rs.n_groups(); g-- > 0;) {
      for (std::size_t k = starts[g]; k < starts[g + 1]; ++k) {
        const auto i = static_cast<Eigen::Index>(order[k]);
        const double e = std::exp(eta[i] - shift);
        s0 += e;
        s1.noalias() += e * x.row(i).transpose();
      }
      if (events[static_cast<std::size_t>(g)] > 0) info -= events[g] * (s1 / s0).cwiseAbs2();
    }
    Eigen::Index best = -1;
    double best_stat = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double denom = info[j] + penalty;
      if (!(denom > 0.0)) continue;
      const double stat = score[j] * score[j] / denom;
      if (stat > best_stat) {
        best_stat = stat;
        best = j;
      }
    }
    if (best < 0) break;
    const double delta = score[best] / (info[best] + penalty);
    out.beta[best] += delta;
    out.updated.push_back(best);
    eta.noalias() += delta * x.col(best);
  }
  return out;
}

inline ScoredFeatures select_coxboost(const SurvivalDataset& data, const ProbeSet& probes, int steps = 100,
                                      std::optional<double> penalty = std::nullopt) {
  const Design d = build_design(data, probes);
  const double pen = penalty ? *penalty : 9.0 * static_cast<double>(data.n_events());
  const Vector beta = coxboost_fit(d.x, data.outcome(), steps, pen).beta;
  std::vector<double> scores(d.names.size());
  for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = std::abs(beta[static_cast<Eigen::Index>(j)]);
  return make_scored(d.names, std::move(scores), SelectorId::COXBOOST);
}

inline ScoredFeatures select_rsf(const SurvivalDataset& data, const ProbeSet& probes, const ForestParams& params,
                                 std::uint64_t seed) {
  const Design d = build_design(data, probes);
  auto forest = survival_forest_importance(d.x, data.outcome(), params, seed);
  auto out = make_scored(d.names, std::move(forest.importance), SelectorId::RSF);
  out.degenerate = forest.degenerate;
  return out;
}

inline ScoredFeatures run_selector(const SelectorConfig& config, const SurvivalDataset& data, const ProbeSet& probes,
                                   std::uint64_t seed) {
  const auto& p = config.params;
  switch (config.id) {
    case SelectorId::UNI: return select_uni(data, probes);
    case SelectorId::LASSO: return select_lasso(data, probes, p);
    case SelectorId::ENET: return select_enet(data, probes, p);
    case SelectorId::GLMBOOST: return select_glmboost(data, probes, p.mstop, p.nu);
    case SelectorId::COXBOOST: return select_coxboost(data, probes, p.steps, p.penalty);
    case SelectorId::RSF: return select_rsf(data, probes, p.forest, seed);
  }
  throw ConfigError("unhandled selector");
}

}  // namespace efsc
