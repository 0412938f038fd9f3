#pragma once

// Elastic-net penalized Cox regression: proximal Newton outer loop with
// coordinate descent on the working-set quadratic model.
//
// Objective: loss(beta) / n + lambda * (alpha |beta|_1 + (1 - alpha)/2 |beta|^2)

#include "efsc/cox.hpp"

namespace efsc {

struct ElasticNetFit {
  Vector beta;
  double lambda = 0.0;
  int outer_iterations = 0;
  bool converged = false;
};

/// Smallest lambda whose solution is all zeros.
inline double elastic_net_lambda_max(const Matrix& x, const RiskSets& rs, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("elastic net alpha must lie in (0, 1]");
  Vector g;
  rs.eta_derivatives(Vector::Zero(x.rows()), g);
  if (x.cols() == 0) return 0.0;
  return (x.transpose() * g).cwiseAbs().maxCoeff() / (static_cast<double>(x.rows()) * alpha);
}

inline double elastic_net_objective(const Matrix& x, const RiskSets& rs, const Vector& beta, double alpha,
                                    double lambda) {
  const double n = static_cast<double>(x.rows());
  return rs.loss(x * beta) / n + lambda * (alpha * beta.lpNorm<1>() + 0.5 * (1.0 - alpha) * beta.squaredNorm());
}

namespace detail {
inline double soft_threshold(double u, double t) {
  if (u > t) return u - t;
  if (u < -t) return u + t;
  return 0.0;
}
}  // namespace detail

inline ElasticNetFit fit_elastic_net_cox(const Matrix& x, const RiskSets& rs, double alpha, double lambda,
                                         const Vector* warm_start = nullptr, double lambda_max = -1.0) {
  const Eigen::Index n = x.rows(), p = x.cols();
  ElasticNetFit fit;
  fit.lambda = lambda;
  fit.beta = Vector::Zero(p);
  if (p == 0) {
    fit.converged = true;
    return fit;
  }
  if (lambda_max < 0.0) lambda_max = elastic_net_lambda_max(x, rs, alpha);
  if (lambda >= lambda_max) {
    fit.converged = true;
    return fit;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double l1 = lambda * alpha, l2 = lambda * (1.0 - alpha);
  Vector beta = warm_start && warm_start->size() == p ? *warm_start : Vector::Zero(p);
  Vector eta = x * beta;
  double objective = elastic_net_objective(x, rs, beta, alpha, lambda);
  Vector grad_eta;

  // Proximal Newton: the quadratic model uses the exact beta-Hessian on the
  // working set (nonzero coefficients plus KKT violators), solved by
  // coordinate descent, followed by a backtracking step on the objective.
  constexpr int kMaxOuter = 100;
  for (fit.outer_iterations = 0; fit.outer_iterations < kMaxOuter; ++fit.outer_iterations) {
    rs.eta_derivatives(eta, grad_eta);
    const Vector g = (x.transpose() * grad_eta) * inv_n + l2 * beta;
    std::vector<Eigen::Index> work;
    double kkt = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (beta[j] != 0.0) {
        work.push_back(j);
        kkt = std::max(kkt, std::abs(g[j] + l1 * (beta[j] > 0.0 ? 1.0 : -1.0)));
      } else if (std::abs(g[j]) > l1) {
        work.push_back(j);
        kkt = std::max(kkt, std::abs(g[j]) - l1);
      }
    }
    if (kkt < 1e-7) {
      fit.converged = true;
      break;
    }
    const auto a = static_cast<Eigen::Index>(work.size());
    const Matrix xw = x(Eigen::all, work);
    const Matrix h = rs.hessian(xw, eta) * inv_n;
    Vector b(a), r(a);
    for (Eigen::Index k = 0; k < a; ++k) {
      b[k] = beta[work[static_cast<std::size_t>(k)]];
      r[k] = g[work[static_cast<std::size_t>(k)]] - l2 * b[k];  // smooth-loss part only
    }
    const Vector b0 = b;
    for (int pass = 0; pass < 10000; ++pass) {
      double change = 0.0;
      for (Eigen::Index k = 0; k < a; ++k) {
        const double curv = h(k, k);
        if (!(curv > 0.0)) continue;
        const double next = detail::soft_threshold(curv * b[k] - r[k], l1) / (curv + l2);
        const double delta = next - b[k];
        if (delta == 0.0) continue;
        b[k] = next;
        r.noalias() += delta * h.col(k);
        change = std::max(change, curv * delta * delta);
      }
      if (change < 1e-16) break;
    }

    Vector next_beta = beta;
    const Vector beta_old = beta;
    double step = 1.0, next_obj = objective;
    bool improved = false;
    for (int halving = 0; halving < 30; ++halving, step *= 0.5) {
      for (Eigen::Index k = 0; k < a; ++k)
        next_beta[work[static_cast<std::size_t>(k)]] = b0[k] + step * (b[k] - b0[k]);
      next_obj = elastic_net_objective(x, rs, next_beta, alpha, lambda);
      if (next_obj <= objective) {
        improved = true;
        break;
      }
    }
    if (!improved) {
      fit.converged = true;  // no descent left at machine precision
      break;
    }
    beta = next_beta;
    eta = x * beta;
    const double rel = (objective - next_obj) / std::max(1e-12, std::abs(next_obj));
    const double max_step = (beta - beta_old).cwiseAbs().maxCoeff();
    objective = next_obj;
    if (rel < 1e-14 && max_step < 1e-10) {
      fit.converged = true;
      ++fit.outer_iterations;
      break;
    }
  }
  fit.beta = beta;
  return fit;
}

inline ElasticNetFit fit_elastic_net_cox(const Matrix& x, Outcome y, double alpha, double lambda) {
  return fit_elastic_net_cox(x, RiskSets(y), alpha, lambda);
}

/// lambda_max down to lambda_max * ratio, log-spaced.
inline std::vector<double> elastic_net_lambda_path(double lambda_max, int points, double ratio) {
  if (points < 1) throw std::invalid_argument("lambda path needs at least one point");
  return detail::log_grid(lambda_max, lambda_max * ratio, points);
}

struct ElasticNetCv {
  std::vector<double> lambdas;
  std::vector<double> cv_deviance;
  std::size_t best = 0;
  ElasticNetFit fit;  // refit on all rows at lambdas[best]
};

/// Chooses lambda by k-fold cross-validated partial-likelihood deviance
/// (minimum rule) and refits on all rows with warm starts along the path.
inline ElasticNetCv cv_elastic_net_cox(const Matrix& x, Outcome y, double alpha, int path_points = 50,
                                       double ratio = 0.01, int folds = 5) {
  ElasticNetCv out;
  const RiskSets full(y);
  const double lambda_max = elastic_net_lambda_max(x, full, alpha);
  const Eigen::Index p = x.cols();
  if (!(lambda_max > 0.0) || p == 0) {
    out.lambdas = {0.0};
    out.cv_deviance = {0.0};
    out.fit.beta = Vector::Zero(p);
    out.fit.converged = true;
    return out;
  }
  out.lambdas = elastic_net_lambda_path(lambda_max, path_points, ratio);
  out.cv_deviance.assign(out.lambdas.size(), 0.0);
  const auto labels = deterministic_folds(x, y, folds);
  for (int f = 0; f < folds; ++f) {
    const auto train = detail::take_rows(x, y, labels, f, false);
    if (train.outcome().n_events() == 0) continue;
    const RiskSets train_rs(train.outcome());
    const double fold_max = elastic_net_lambda_max(train.x, train_rs, alpha);
    Vector warm = Vector::Zero(p);
    for (std::size_t l = 0; l < out.lambdas.size(); ++l) {
      warm = fit_elastic_net_cox(train.x, train_rs, alpha, out.lambdas[l], &warm, fold_max).beta;
      out.cv_deviance[l] += full.loss(x * warm) - train_rs.loss(train.x * warm);
    }
  }
  out.best = static_cast<std::size_t>(std::min_element(out.cv_deviance.begin(), out.cv_deviance.end()) -
                                      out.cv_deviance.begin());
  Vector warm = Vector::Zero(p);
  for (std::size_t l = 0; l <= out.best; ++l) {
    out.fit = fit_elastic_net_cox(x, full, alpha, out.lambdas[l], &warm, lambda_max);
    warm = out.fit.beta;
  }
  return out;
}

}  // namespace efsc
