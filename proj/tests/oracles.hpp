#pragma once

// Slow, independent reference implementations used only by the tests.

#include "efsc/common.hpp"
#include "efsc/data_model.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace oracle {

using efsc::Matrix;
using efsc::Vector;

/// O(n^2) Harrell C: pairs with t_i < t_j and event_i; risk ties count 0.5.
inline double brute_cindex(const std::vector<double>& risk, const std::vector<double>& time,
                           const std::vector<int>& event) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i)
    for (std::size_t j = 0; j < time.size(); ++j) {
      if (!(time[i] < time[j]) || event[i] != 1) continue;
      den += 1.0;
      if (risk[i] > risk[j]) num += 1.0;
      else if (risk[i] == risk[j]) num += 0.5;
    }
  return den > 0.0 ? num / den : 0.5;
}

/// Breslow negative log partial likelihood summed event by event.
inline double brute_nlpl(const Vector& beta, const Matrix& x, const std::vector<double>& time,
                         const std::vector<int>& event) {
  const Vector eta = x * beta;
  double value = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] != 1) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < time.size(); ++j)
      if (time[j] >= time[i]) s += std::exp(eta[static_cast<Eigen::Index>(j)]);
    value -= eta[static_cast<Eigen::Index>(i)] - std::log(s);
  }
  return value;
}

/// Gradient and Hessian from the textbook risk-set sums.
inline void brute_derivatives(const Vector& beta, const Matrix& x, const std::vector<double>& time,
                              const std::vector<int>& event, Vector& grad, Matrix& hess) {
  const Eigen::Index p = x.cols();
  const Vector eta = x * beta;
  grad = Vector::Zero(p);
  hess = Matrix::Zero(p, p);
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] != 1) continue;
    double s0 = 0.0;
    Vector s1 = Vector::Zero(p);
    Matrix s2 = Matrix::Zero(p, p);
    for (std::size_t j = 0; j < time.size(); ++j) {
      if (time[j] < time[i]) continue;
      const double w = std::exp(eta[static_cast<Eigen::Index>(j)]);
      const Vector xj = x.row(static_cast<Eigen::Index>(j)).transpose();
      s0 += w;
      s1 += w * xj;
      s2 += w * xj * xj.transpose();
    }
    grad -= x.row(static_cast<Eigen::Index>(i)).transpose() - s1 / s0;
    hess += s2 / s0 - (s1 / s0) * (s1 / s0).transpose();
  }
}

/// Plain Newton on nlpl + (lambda/2)|beta|^2 using the brute-force
/// derivatives; no step control beyond halving on the brute objective.
inline Vector newton_fit(const Matrix& x, const std::vector<double>& time, const std::vector<int>& event,
                         double lambda = 0.0) {
  Vector beta = Vector::Zero(x.cols());
  auto obj = [&](const Vector& b) { return brute_nlpl(b, x, time, event) + 0.5 * lambda * b.squaredNorm(); };
  for (int it = 0; it < 100; ++it) {
    Vector g;
    Matrix h;
    brute_derivatives(beta, x, time, event, g, h);
    g += lambda * beta;
    h += lambda * Matrix::Identity(x.cols(), x.cols());
    const Vector step = h.ldlt().solve(g);
    double t = 1.0;
    const double f0 = obj(beta);
    while (t > 1e-10 && obj(beta - t * step) > f0) t *= 0.5;
    beta -= t * step;
    if (step.norm() * t < 1e-12) break;
  }
  return beta;
}

/// Ranks by counting: rank = 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> count_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double brute_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(count_ranks(a), count_ranks(b));
}

/// P(Beta(k, n-k+1) <= x) written as the binomial tail P(Bin(n, x) >= k).
inline double beta_order_cdf(int k, int n, double x) {
  double total = 0.0;
  for (int i = k; i <= n; ++i) {
    double log_c = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
    double term = log_c + (i > 0 ? i * std::log(x) : 0.0) + (n - i > 0 ? (n - i) * std::log1p(-x) : 0.0);
    if (x <= 0.0) term = i == 0 ? 0.0 : -INFINITY;
    if (x >= 1.0) term = i == n ? 0.0 : -INFINITY;
    total += std::exp(term);
  }
  return total;
}

/// Closed-form relative weighted consistency:
///   (d (N - D + sum F(F-1)) - N^2 + D^2) / (d (H^2 + n (N - H) - D) - N^2 + D^2)
/// with D = N mod d and H = N mod n.
inline double closed_form_rwc(const std::vector<std::vector<std::string>>& subsets, std::size_t universe) {
  std::map<std::string, double> freq;
  double total = 0.0;
  for (const auto& s : subsets)
    for (const auto& f : s) {
      freq[f] += 1.0;
      total += 1.0;
    }
  const double n = static_cast<double>(subsets.size()), d = static_cast<double>(universe);
  const double D = std::fmod(total, d), H = std::fmod(total, n);
  double sff = 0.0;
  for (const auto& [_, f] : freq) sff += f * (f - 1.0);
  const double num = d * (total - D + sff) - total * total + D * D;
  const double den = d * (H * H + n * (total - H) - D) - total * total + D * D;
  return num / den;
}

}  // namespace oracle
