#pragma once

// Cox partial likelihood (Breslow ties), univariate and ridge fits, and
// Harrell's concordance index. All routines here are deterministic.

#include "efsc/common.hpp"
#include "efsc/data_model.hpp"

#include <limits>
#include <optional>

namespace efsc {

inline constexpr double kCoefficientClamp = 50.0;

/// Tied-time groups of an outcome in ascending time order. Precomputing this
/// once lets the loss and its derivatives run in O(n) per evaluation.
class RiskSets {
 public:
  explicit RiskSets(Outcome y) : event_(y.event.begin(), y.event.end()) {
    const std::size_t n = y.size();
    if (y.event.size() != n) throw std::invalid_argument("outcome time/event lengths differ");
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return y.time[a] < y.time[b]; });
    group_of_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (k == 0 || y.time[order_[k]] != y.time[order_[k - 1]]) {
        group_start_.push_back(k);
        group_events_.push_back(0);
      }
      group_of_[order_[k]] = group_start_.size() - 1;
      group_events_.back() += event_[order_[k]];
    }
    group_start_.push_back(n);
    n_events_ = static_cast<std::size_t>(std::count(event_.begin(), event_.end(), 1));
  }

  std::size_t size() const { return order_.size(); }
  std::size_t n_events() const { return n_events_; }
  std::size_t n_groups() const { return group_events_.size(); }

  /// Negative log partial likelihood as a function of the linear predictor.
  double loss(const Vector& eta) const {
    if (size() == 0) return 0.0;
    const double shift = eta.maxCoeff();
    double risk_sum = 0.0, value = 0.0;
    for (std::size_t g = n_groups(); g-- > 0;) {
      for (std::size_t k = group_start_[g]; k < group_start_[g + 1]; ++k)
        risk_sum += std::exp(eta[static_cast<Eigen::Index>(order_[k])] - shift);
      if (group_events_[g] == 0) continue;
      const double log_s0 = std::log(risk_sum) + shift;
      for (std::size_t k = group_start_[g]; k < group_start_[g + 1]; ++k)
        if (event_[order_[k]]) value -= eta[static_cast<Eigen::Index>(order_[k])] - log_s0;
    }
    return value;
  }

  /// Gradient of the loss with respect to eta, and optionally the diagonal
  /// of the eta-Hessian. Also returns the per-subject weight exp(eta_k) A_k
  /// (A_k = sum over event groups at or before t_k of d_g / S0_g) via `weight`.
  void eta_derivatives(const Vector& eta, Vector& grad, Vector* hess_diag = nullptr, Vector* weight = nullptr) const {
    const std::size_t n = size();
    const auto ni = static_cast<Eigen::Index>(n);
    grad.resize(ni);
    if (hess_diag) hess_diag->resize(ni);
    if (weight) weight->resize(ni);
    if (n == 0) return;
    const double shift = eta.maxCoeff();
    std::vector<double> s0(n_groups());
    double risk_sum = 0.0;
    for (std::size_t g = n_groups(); g-- > 0;) {
      for (std::size_t k = group_start_[g]; k < group_start_[g + 1]; ++k)
        risk_sum += std::exp(eta[static_cast<Eigen::Index>(order_[k])] - shift);
      s0[g] = risk_sum;
    }
    double a = 0.0, b = 0.0;
    for (std::size_t g = 0; g < n_groups(); ++g) {
      if (group_events_[g] > 0) {
        a += group_events_[g] / s0[g];
        b += group_events_[g] / (s0[g] * s0[g]);
      }
      for (std::size_t k = group_start_[g]; k < group_start_[g + 1]; ++k) {
        const auto i = static_cast<Eigen::Index>(order_[k]);
        const double e = std::exp(eta[i] - shift);
        grad[i] = e * a - event_[order_[k]];
        if (hess_diag) (*hess_diag)[i] = e * a - e * e * b;
        if (weight) (*weight)[i] = e * a;
      }
    }
  }

  /// Hessian of the loss with respect to beta for eta = X beta.
  Matrix hessian(const Matrix& x, const Vector& eta) const {
    const std::size_t n = size();
    const Eigen::Index p = x.cols();
    Vector grad, weight;
    eta_derivatives(eta, grad, nullptr, &weight);
    Matrix h = x.transpose() * weight.asDiagonal() * x;
    if (n == 0 || p == 0) return h;
    const double shift = eta.maxCoeff();
    Vector s1 = Vector::Zero(p);
    double s0 = 0.0;
    Matrix centers(static_cast<Eigen::Index>(n_groups()), p);
    Eigen::Index rows = 0;
    for (std::size_t g = n_groups(); g-- > 0;) {
      for (std::size_t k = group_start_[g]; k < group_start_[g + 1]; ++k) {
        const auto i = static_cast<Eigen::Index>(order_[k]);
        const double e = std::exp(eta[i] - shift);
        s0 += e;
        s1 += e * x.row(i).transpose();
      }
      if (group_events_[g] > 0) centers.row(rows++) = std::sqrt(static_cast<double>(group_events_[g])) * s1.transpose() / s0;
    }
    h -= centers.topRows(rows).transpose() * centers.topRows(rows);
    return h;
  }

  /// Row indices sorted by ascending time; tie groups are contiguous.
  const std::vector<std::size_t>& order() const { return order_; }
  const std::vector<std::size_t>& group_start() const { return group_start_; }
  const std::vector<int>& group_events() const { return group_events_; }
  const std::vector<int>& event() const { return event_; }

 private:
  std::vector<int> event_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> group_of_;
  std::vector<std::size_t> group_start_;
  std::vector<int> group_events_;
  std::size_t n_events_ = 0;
};

namespace detail {
inline void check_problem(const Vector& beta, const Matrix& x, Outcome y) {
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.event.size() != y.size())
    throw std::invalid_argument("design matrix rows do not match outcome length");
  if (x.cols() != beta.size()) throw std::invalid_argument("coefficient length does not match design columns");
  if (!beta.allFinite()) throw std::invalid_argument("non-finite coefficient vector");
}
}  // namespace detail

/// -sum over events of [eta_i - log sum_{j: t_j >= t_i} exp(eta_j)], eta = X beta.
inline double neg_log_partial_likelihood(const Vector& beta, const Matrix& x, Outcome y) {
  detail::check_problem(beta, x, y);
  return RiskSets(y).loss(x * beta);
}

inline Vector gradient_nlpl(const Vector& beta, const Matrix& x, Outcome y) {
  detail::check_problem(beta, x, y);
  Vector g;
  RiskSets(y).eta_derivatives(x * beta, g);
  return x.transpose() * g;
}

inline Matrix hessian_nlpl(const Vector& beta, const Matrix& x, Outcome y) {
  detail::check_problem(beta, x, y);
  return RiskSets(y).hessian(x, x * beta);
}

// ---------------------------------------------------------------------------
// Concordance

struct Concordance {
  double value = 0.5;
  std::int64_t concordant = 0;
  std::int64_t tied_risk = 0;
  std::int64_t comparable = 0;
  bool degenerate = false;
};

/// Harrell's C. A pair (i, j) is comparable when time_i < time_j and
/// event_i = 1; it scores 1 when risk_i > risk_j and 0.5 on tied risk.
/// Runs in O(n log n) with a Fenwick tree over risk ranks.
inline Concordance concordance(std::span<const double> risk, Outcome y) {
  const std::size_t n = y.size();
  if (risk.size() != n) throw std::invalid_argument("concordance: risk and outcome lengths differ");
  std::vector<double> sorted_risk(risk.begin(), risk.end());
  std::sort(sorted_risk.begin(), sorted_risk.end());
  sorted_risk.erase(std::unique(sorted_risk.begin(), sorted_risk.end()), sorted_risk.end());
  const std::size_t levels = sorted_risk.size();
  auto level_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risk.begin(), sorted_risk.end(), r) - sorted_risk.begin());
  };
  std::vector<std::int64_t> tree(levels + 1, 0);
  auto add = [&](std::size_t pos) {
    for (std::size_t i = pos + 1; i <= levels; i += i & (~i + 1)) ++tree[i];
  };
  auto prefix = [&](std::size_t count) {  // number inserted with level < count
    std::int64_t s = 0;
    for (std::size_t i = count; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y.time[a] > y.time[b]; });

  Concordance c;
  std::int64_t inserted = 0;
  std::size_t k = 0;
  while (k < n) {
    std::size_t end = k + 1;
    while (end < n && y.time[order[end]] == y.time[order[k]]) ++end;
    for (std::size_t m = k; m < end; ++m) {
      const std::size_t i = order[m];
      if (y.event[i] != 1) continue;
      const std::size_t lvl = level_of(risk[i]);
      const std::int64_t below = prefix(lvl);
      const std::int64_t at_or_below = prefix(lvl + 1);
      c.concordant += below;
      c.tied_risk += at_or_below - below;
      c.comparable += inserted;
    }
    for (std::size_t m = k; m < end; ++m) {
      add(level_of(risk[order[m]]));
      ++inserted;
    }
    k = end;
  }
  if (c.comparable == 0) {
    c.degenerate = true;
    c.value = 0.5;
  } else {
    c.value = (static_cast<double>(c.concordant) + 0.5 * static_cast<double>(c.tied_risk)) /
              static_cast<double>(c.comparable);
  }
  return c;
}

inline double concordance_index(std::span<const double> risk, Outcome y) { return concordance(risk, y).value; }

inline double concordance_index(const Vector& risk, Outcome y) {
  return concordance(std::span<const double>(risk.data(), static_cast<std::size_t>(risk.size())), y).value;
}

// ---------------------------------------------------------------------------
// Univariate fit

struct UnivariateFit {
  double beta = 0.0;
  double score = 0.5;  // C-index of beta * x on the fitting data
  int iterations = 0;
  bool degenerate = false;  // constant column
  bool clamped = false;     // |beta| hit the clamp (monotone likelihood)
};

inline UnivariateFit fit_univariate_cox(std::span<const double> x, const RiskSets& risk_sets, Outcome y) {
  UnivariateFit fit;
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::Map<const Vector> xv(x.data(), n);
  if (n == 0 || xv.maxCoeff() - xv.minCoeff() <= 0.0) {
    fit.degenerate = true;
    return fit;
  }
  Matrix xm = xv;
  auto loss_at = [&](double b) { return risk_sets.loss(xv * b); };
  double beta = 0.0;
  double current = loss_at(beta);
  Vector grad;
  for (fit.iterations = 0; fit.iterations < 25; ++fit.iterations) {
    const Vector eta = xv * beta;
    risk_sets.eta_derivatives(eta, grad);
    const double g = xv.dot(grad);
    const double h = risk_sets.hessian(xm, eta)(0, 0);
    if (!(h > 0.0)) break;
    double step = -g / h;
    double next = std::clamp(beta + step, -kCoefficientClamp, kCoefficientClamp);
    double next_loss = loss_at(next);
    for (int halving = 0; halving < 30 && next_loss > current; ++halving) {
      step *= 0.5;
      next = std::clamp(beta + step, -kCoefficientClamp, kCoefficientClamp);
      next_loss = loss_at(next);
    }
    if (next_loss > current) break;
    const double delta = std::abs(next - beta);
    beta = next;
    current = next_loss;
    if (delta < 1e-8) {
      ++fit.iterations;
      break;
    }
  }
  fit.beta = beta;
  fit.clamped = std::abs(beta) >= kCoefficientClamp;
  const Vector risk = xv * beta;
  fit.score = concordance_index(risk, y);
  return fit;
}

inline UnivariateFit fit_univariate_cox(std::span<const double> x, Outcome y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_univariate_cox: length mismatch");
  return fit_univariate_cox(x, RiskSets(y), y);
}

// ---------------------------------------------------------------------------
// Ridge fit

struct CoxModel {
  Vector coefficients;
  std::vector<std::string> feature_names;
  double lambda = 0.0;
  bool converged = false;
  bool clamped = false;
  int iterations = 0;

  /// Linear predictor for rows of `x`; a model without features predicts a
  /// constant risk.
  Vector predict(const Matrix& x) const {
    if (coefficients.size() == 0) return Vector::Zero(x.rows());
    return x * coefficients;
  }
};

inline double ridge_objective(const RiskSets& rs, const Matrix& x, const Vector& beta, double lambda) {
  return rs.loss(x * beta) + 0.5 * lambda * beta.squaredNorm();
}

/// Newton iterations with step-halving on loss + (lambda/2)|beta|^2.
/// Converged when the Newton step drops below 1e-9 in every coordinate.
inline CoxModel fit_ridge_cox(const Matrix& x, const RiskSets& rs, double lambda, const Vector* warm_start = nullptr,
                              int max_iterations = 200) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("fit_ridge_cox: lambda must be >= 0");
  CoxModel model;
  model.lambda = lambda;
  const Eigen::Index p = x.cols();
  model.coefficients = Vector::Zero(p);
  if (p == 0) {
    model.converged = true;
    return model;
  }
  Vector beta = warm_start && warm_start->size() == p ? *warm_start : Vector::Zero(p);
  double current = ridge_objective(rs, x, beta, lambda);
  Vector g_eta;
  for (model.iterations = 0; model.iterations < max_iterations; ++model.iterations) {
    const Vector eta = x * beta;
    rs.eta_derivatives(eta, g_eta);
    const Vector grad = x.transpose() * g_eta + lambda * beta;
    Matrix h = rs.hessian(x, eta);
    h.diagonal().array() += lambda;
    Eigen::LDLT<Matrix> ldlt(h);
    Vector step = ldlt.solve(-grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || grad.dot(step) >= 0.0) {
      h.diagonal().array() += 1e-8 * std::max(1.0, h.diagonal().maxCoeff());
      step = h.ldlt().solve(-grad);
      if (!step.allFinite()) break;
    }
    // a gradient test alone stops early under separation, where the
    // Newton step stays O(1) while the gradient vanishes
    if (step.cwiseAbs().maxCoeff() < 1e-9) {
      model.converged = true;
      break;
    }
    Vector next = (beta + step).cwiseMax(-kCoefficientClamp).cwiseMin(kCoefficientClamp);
    double next_obj = ridge_objective(rs, x, next, lambda);
    for (int halving = 0; halving < 40 && !(next_obj <= current); ++halving) {
      step *= 0.5;
      next = (beta + step).cwiseMax(-kCoefficientClamp).cwiseMin(kCoefficientClamp);
      next_obj = ridge_objective(rs, x, next, lambda);
    }
    if (!(next_obj <= current)) break;
    // a full Newton step of O(1) that no longer moves the objective means the
    // likelihood is monotone along it (separation): run out to the clamp
    const double flat = 1e-12 * std::max(1.0, std::abs(current));
    if (lambda == 0.0 && next_obj >= current - flat &&
        step.cwiseAbs().maxCoeff() > 1e-3) {
      const Vector far = (beta + 2.0 * kCoefficientClamp * step / step.cwiseAbs().maxCoeff())
                             .cwiseMax(-kCoefficientClamp)
                             .cwiseMin(kCoefficientClamp);
      if (ridge_objective(rs, x, far, lambda) <= current + flat) beta = far;
      break;
    }
    const bool stalled = (next - beta).cwiseAbs().maxCoeff() < 1e-12;
    beta = next;
    current = next_obj;
    if (stalled) break;
  }
  if (!model.converged) {
    Vector g;
    rs.eta_derivatives(x * beta, g);
    model.converged = (x.transpose() * g + lambda * beta).norm() < 1e-6;
  }
  model.coefficients = beta;
  model.clamped = (beta.cwiseAbs().array() >= kCoefficientClamp).any();
  return model;
}

inline CoxModel fit_ridge_cox(const Matrix& x, Outcome y, double lambda) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw std::invalid_argument("fit_ridge_cox: length mismatch");
  return fit_ridge_cox(x, RiskSets(y), lambda);
}

/// Deterministic k-fold labels (0..k-1) stratified by event: subjects are
/// ordered by (event, time, feature row) and dealt round-robin. Identical
/// rows are interchangeable, so the split does not depend on row order.
inline std::vector<int> deterministic_folds(const Matrix& x, Outcome y, int k) {
  const std::size_t n = y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (y.event[a] != y.event[b]) return y.event[a] > y.event[b];
    if (y.time[a] != y.time[b]) return y.time[a] < y.time[b];
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double va = x(static_cast<Eigen::Index>(a), c), vb = x(static_cast<Eigen::Index>(b), c);
      if (va != vb) return va < vb;
    }
    return false;
  });
  std::vector<int> labels(n);
  for (std::size_t m = 0; m < n; ++m) labels[order[m]] = static_cast<int>(m % static_cast<std::size_t>(k));
  return labels;
}

namespace detail {

struct FoldData {
  Matrix x;
  std::vector<double> time;
  std::vector<int> event;
  Outcome outcome() const { return {time, event}; }
};

inline FoldData take_rows(const Matrix& x, Outcome y, const std::vector<int>& labels, int fold, bool keep) {
  FoldData out;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if ((labels[i] == fold) == keep) rows.push_back(static_cast<Eigen::Index>(i));
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.x.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
    out.time.push_back(y.time[static_cast<std::size_t>(rows[k])]);
    out.event.push_back(y.event[static_cast<std::size_t>(rows[k])]);
  }
  return out;
}

inline std::vector<double> log_grid(double hi, double lo, int points) {
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double a = std::log(hi), b = std::log(lo);
  for (int i = 0; i < points; ++i)
    grid[static_cast<std::size_t>(i)] = points == 1 ? hi : std::exp(a + (b - a) * i / (points - 1));
  return grid;
}

}  // namespace detail

struct RidgeTuning {
  int folds = 5;
  int grid_points = 20;
  double grid_ratio = 1e-3;  // smallest lambda = lambda_max * ratio
};

/// Ridge fit with lambda chosen by internal cross-validation over a log grid
/// from lambda_max * ratio to lambda_max (lambda_max = max |gradient at 0|).
/// Held-out deviance is the cross-validated partial likelihood: the full-data
/// loss minus the training-part loss, both at the training-part fit.
inline CoxModel fit_ridge_cox_cv(const Matrix& x, Outcome y, const RidgeTuning& tuning = {}) {
  const Eigen::Index p = x.cols();
  if (p == 0) {
    CoxModel null_model;
    null_model.converged = true;
    return null_model;
  }
  const RiskSets full(y);
  Vector g0;
  full.eta_derivatives(Vector::Zero(x.rows()), g0);
  const double lambda_max = (x.transpose() * g0).cwiseAbs().maxCoeff();
  if (!(lambda_max > 0.0)) return fit_ridge_cox(x, full, 1.0);
  const auto grid = detail::log_grid(lambda_max, lambda_max * tuning.grid_ratio, tuning.grid_points);
  const auto labels = deterministic_folds(x, y, tuning.folds);

  std::vector<double> cv_dev(grid.size(), 0.0);
  for (int f = 0; f < tuning.folds; ++f) {
    const auto train = detail::take_rows(x, y, labels, f, false);
    if (train.outcome().n_events() == 0) continue;
    const RiskSets train_rs(train.outcome());
    Vector warm = Vector::Zero(p);
    for (std::size_t l = 0; l < grid.size(); ++l) {
      const CoxModel m = fit_ridge_cox(train.x, train_rs, grid[l], &warm, 50);
      warm = m.coefficients;
      cv_dev[l] += full.loss(x * warm) - train_rs.loss(train.x * warm);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(cv_dev.begin(), cv_dev.end()) - cv_dev.begin());
  Vector warm = Vector::Zero(p);
  CoxModel model;
  for (std::size_t l = 0; l <= best; ++l) {
    model = fit_ridge_cox(x, full, grid[l], &warm, l == best ? 200 : 50);
    warm = model.coefficients;
  }
  return model;
}

}  // namespace efsc
