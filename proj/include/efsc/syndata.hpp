#pragma once

// Synthetic right-censored data with planted correlated feature groups and
// known relevant features.

#include "efsc/data_model.hpp"

#include <nlohmann/json.hpp>

namespace efsc {

struct FeatureGroup {
  std::size_t size = 0;
  double rho = 0.0;  // within-group correlation of the latent Gaussians
};

struct SynthSpec {
  std::size_t n = 400;
  std::size_t p = 60;
  std::vector<FeatureGroup> groups;
  std::vector<std::size_t> relevant;  // 0-based feature indices
  std::vector<double> beta;           // true coefficients, aligned with `relevant`
  double baseline_rate = 0.1;
  double weibull_shape = 1.0;  // 1 = exponential baseline hazard
  double target_censoring = 0.6;
  double binarize_fraction = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    std::size_t grouped = 0;
    for (const auto& g : groups) {
      if (g.size == 0 || !(g.rho >= 0.0 && g.rho < 1.0)) throw ConfigError("group needs size >= 1 and rho in [0,1)");
      grouped += g.size;
    }
    if (grouped > p) throw ConfigError("group sizes exceed p");
    if (n < 2 || p < 1) throw ConfigError("synthetic data needs n >= 2 and p >= 1");
    if (relevant.size() != beta.size()) throw ConfigError("relevant and beta lengths differ");
    for (auto r : relevant)
      if (r >= p) throw ConfigError("relevant index out of range");
    if (!(target_censoring >= 0.0 && target_censoring < 1.0)) throw ConfigError("target_censoring must lie in [0,1)");
    if (!(binarize_fraction >= 0.0 && binarize_fraction <= 1.0)) throw ConfigError("binarize_fraction must lie in [0,1]");
    if (!(baseline_rate > 0.0) || !(weibull_shape > 0.0)) throw ConfigError("baseline rate and shape must be positive");
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
      s.n = j.value("n", s.n);
      s.p = j.value("p", s.p);
      if (j.contains("groups"))
        for (const auto& g : j.at("groups")) s.groups.push_back({g.at("size").get<std::size_t>(), g.at("rho").get<double>()});
      s.relevant = j.value("relevant", s.relevant);
      s.beta = j.value("beta", s.beta);
      s.baseline_rate = j.value("baseline_rate", s.baseline_rate);
      s.weibull_shape = j.value("weibull_shape", s.weibull_shape);
      s.target_censoring = j.value("target_censoring", s.target_censoring);
      s.binarize_fraction = j.value("binarize_fraction", s.binarize_fraction);
      s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& g : groups) gs.push_back({{"size", g.size}, {"rho", g.rho}});
    return {{"n", n},
            {"p", p},
            {"groups", gs},
            {"relevant", relevant},
            {"beta", beta},
            {"baseline_rate", baseline_rate},
            {"weibull_shape", weibull_shape},
            {"target_censoring", target_censoring},
            {"binarize_fraction", binarize_fraction},
            {"seed", seed}};
  }
};

struct GroundTruth {
  std::vector<std::string> relevant;
  std::vector<double> beta;
  std::vector<std::vector<std::string>> groups;
  double censoring_rate = 0.0;  // realized
  double censoring_hazard = 0.0;
};

struct SynthData {
  SurvivalDataset data;
  GroundTruth truth;
};

inline nlohmann::json to_json(const GroundTruth& t) {
  return {{"relevant", t.relevant},
          {"beta", t.beta},
          {"groups", t.groups},
          {"censoring_rate", t.censoring_rate},
          {"censoring_hazard", t.censoring_hazard}};
}

inline std::string synth_feature_name(std::size_t j) { return "x" + std::to_string(j + 1); }

/// Gaussian factor model: a member of group g is sqrt(rho) F_g +
/// sqrt(1 - rho) e; ungrouped features are pure noise. Event times follow
/// hazard rate * exp(x beta) (Weibull when shape != 1); censoring times are
/// independent exponentials whose rate is bisected so the expected censored
/// fraction over the sample hits the target. If sampling noise leaves the
/// realized fraction more than 3 points off, the rate is re-bisected on the
/// realized fraction with the censoring draws held fixed.
inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t n = spec.n, p = spec.p;
  const auto ni = static_cast<Eigen::Index>(n);

  SynthData out;
  auto& data = out.data;
  data.features.resize(ni, static_cast<Eigen::Index>(p));
  std::size_t col = 0;
  for (const auto& g : spec.groups) {
    std::vector<std::string> members;
    Vector factor(ni);
    for (auto& v : factor) v = gauss(rng);
    const double a = std::sqrt(g.rho), b = std::sqrt(1.0 - g.rho);
    for (std::size_t k = 0; k < g.size; ++k, ++col) {
      for (Eigen::Index i = 0; i < ni; ++i) data.features(i, static_cast<Eigen::Index>(col)) = a * factor[i] + b * gauss(rng);
      members.push_back(synth_feature_name(col));
    }
    out.truth.groups.push_back(std::move(members));
  }
  for (; col < p; ++col)
    for (Eigen::Index i = 0; i < ni; ++i) data.features(i, static_cast<Eigen::Index>(col)) = gauss(rng);

  data.feature_kind.assign(p, FeatureKind::continuous);
  std::vector<std::size_t> cols(p);
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  std::shuffle(cols.begin(), cols.end(), rng);
  const auto n_binary = static_cast<std::size_t>(std::floor(spec.binarize_fraction * static_cast<double>(p)));
  for (std::size_t k = 0; k < n_binary; ++k) {
    auto c = data.features.col(static_cast<Eigen::Index>(cols[k]));
    c = (c.array() > 0.0).cast<double>();
    data.feature_kind[cols[k]] = FeatureKind::binary;
  }
  for (std::size_t j = 0; j < p; ++j) data.feature_names.push_back(synth_feature_name(j));

  Vector lin = Vector::Zero(ni);
  for (std::size_t k = 0; k < spec.relevant.size(); ++k)
    lin += spec.beta[k] * data.features.col(static_cast<Eigen::Index>(spec.relevant[k]));
  std::vector<double> event_time(n), hazard(n), censor_draw(n);
  for (std::size_t i = 0; i < n; ++i) {
    hazard[i] = spec.baseline_rate * std::exp(lin[static_cast<Eigen::Index>(i)]);
    const double e = -std::log(1.0 - unif(rng));
    event_time[i] = std::pow(e / hazard[i], 1.0 / spec.weibull_shape);
    censor_draw[i] = -std::log(1.0 - unif(rng));  // Exp(1); censoring time = draw / rate
  }

  auto realized = [&](double rate) {
    std::size_t censored = 0;
    for (std::size_t i = 0; i < n; ++i) censored += rate > 0.0 && censor_draw[i] / rate < event_time[i];
    return static_cast<double>(censored) / static_cast<double>(n);
  };
  // P(C < T) = c / (c + h) for exponential T; Weibull falls back to the realized fraction
  auto expected = [&](double rate) {
    if (spec.weibull_shape != 1.0) return realized(rate);
    double s = 0.0;
    for (double h : hazard) s += rate / (rate + h);
    return s / static_cast<double>(n);
  };
  auto bisect = [&](auto&& fraction) {
    double lo = std::log(1e-12 * spec.baseline_rate), hi = std::log(1e12 * spec.baseline_rate);
    for (int step = 0; step < 50; ++step) {
      const double mid = 0.5 * (lo + hi);
      (fraction(std::exp(mid)) < spec.target_censoring ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
  };

  double rate = 0.0;
  if (spec.target_censoring > 0.0) {
    rate = bisect(expected);
    if (std::abs(expected(rate) - spec.target_censoring) > 0.005 && spec.weibull_shape == 1.0)
      throw DataError("censoring target unattainable after 50 bisection steps");
    if (std::abs(realized(rate) - spec.target_censoring) > 0.03) rate = bisect(realized);
    if (std::abs(realized(rate) - spec.target_censoring) > 0.03)
      throw DataError("censoring target unattainable after 50 bisection steps");
  }

  data.time.resize(n);
  data.event.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = rate > 0.0 ? censor_draw[i] / rate : std::numeric_limits<double>::infinity();
    data.event[i] = event_time[i] <= c ? 1 : 0;
    data.time[i] = std::max(std::min(event_time[i], c), 1e-12);
  }
  if (data.n_events() == 0) throw DataError("synthetic draw produced zero events");
  out.truth.censoring_rate = 1.0 - static_cast<double>(data.n_events()) / static_cast<double>(n);
  out.truth.censoring_hazard = rate;
  for (std::size_t k = 0; k < spec.relevant.size(); ++k) {
    out.truth.relevant.push_back(synth_feature_name(spec.relevant[k]));
    out.truth.beta.push_back(spec.beta[k]);
  }
  return out;
}

}  // namespace efsc
