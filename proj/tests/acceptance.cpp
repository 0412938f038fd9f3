// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// fails. The synthetic sweeps behind criteria 7-9 run once per master seed
// and are shared.

#include "efsc/pipeline.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace efsc;

namespace {

using Clock = std::chrono::steady_clock;

// Scale of the comparative sweeps (criteria 7-9, 11). Bootstrap count is
// below the library default of 50 to keep the run inside the time budget on
// a single core.
constexpr int kSweepBootstraps = 20;
constexpr int kMasterSeeds = 5;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome_ {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome_ c_index_oracle() {
  const auto t0 = Clock::now();
  int mismatches = 0;
  Rng rng(101);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    const int ties = static_cast<int>(uniform_index(rng, 3)) * 4;  // 0, 4 or 8 time levels
    const double censor = 0.1 * static_cast<double>(uniform_index(rng, 8));
    auto pr = testing_support::random_problem(n, 1, derive_seed(101, inst), ties, censor);
    std::vector<double> risk(n);
    for (std::size_t i = 0; i < n; ++i) risk[i] = std::round(pr.x(static_cast<Eigen::Index>(i), 0) * 2.0);  // tied risks
    const double fast = concordance_index(risk, pr.outcome());
    const double slow = oracle::brute_cindex(risk, pr.time, pr.event);
    if (fast != slow) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 5.0, fmt("%d/200 mismatches, %.3f s", mismatches, secs)};
}

Outcome_ gradient_check() {
  const auto t0 = Clock::now();
  const double h = 1e-5;
  double worst = 0.0;
  Rng rng(202);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 5 + uniform_index(rng, 26), p = 1 + uniform_index(rng, 5);
    auto pr = testing_support::random_problem(n, p, derive_seed(202, inst), inst % 2 ? 5 : 0);
    Vector beta(static_cast<Eigen::Index>(p));
    std::normal_distribution<double> g(0.0, 0.5);
    for (auto& b : beta) b = g(rng);
    const Vector grad = gradient_nlpl(beta, pr.x, pr.outcome());
    Vector fd(beta.size());
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      Vector up = beta, down = beta;
      up[j] += h;
      down[j] -= h;
      fd[j] = (neg_log_partial_likelihood(up, pr.x, pr.outcome()) -
               neg_log_partial_likelihood(down, pr.x, pr.outcome())) /
              (2.0 * h);
    }
    worst = std::max(worst, (grad - fd).norm() / std::max(grad.norm(), 1e-12));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 5.0, fmt("max relative error %.2e, %.3f s", worst, secs)};
}

Outcome_ solver_consistency() {
  double lasso_err = 0.0, ridge_err = 0.0;
  bool empty_at_max = true;
  for (int inst = 0; inst < 10; ++inst) {
    auto pr = testing_support::random_problem(50, 2, derive_seed(303, inst));
    const RiskSets rs(pr.outcome());
    const Vector ref = oracle::newton_fit(pr.x, pr.time, pr.event);
    const auto lasso = fit_elastic_net_cox(pr.x, rs, 1.0, 1e-8);
    const auto ridge = fit_ridge_cox(pr.x, rs, 0.0);
    lasso_err = std::max(lasso_err, (lasso.beta - ref).cwiseAbs().maxCoeff());
    ridge_err = std::max(ridge_err, (ridge.coefficients - ref).cwiseAbs().maxCoeff());
    const double lmax = elastic_net_lambda_max(pr.x, rs, 1.0);
    const auto top = fit_elastic_net_cox(pr.x, rs, 1.0, lmax);
    empty_at_max = empty_at_max && (top.beta.array() == 0.0).all();
  }
  return {lasso_err <= 1e-3 && ridge_err <= 1e-3 && empty_at_max,
          fmt("lasso max diff %.2e, ridge max diff %.2e, lambda_max empty: %s", lasso_err, ridge_err,
              empty_at_max ? "yes" : "no")};
}

Outcome_ stability_metric() {
  using Subsets = std::vector<std::vector<std::string>>;
  const double ident = relative_weighted_consistency({Subsets(6, {"a", "b", "c"}), 12, std::nullopt}).value;
  Subsets spread;
  for (int k = 0; k < 6; ++k) spread.push_back({"f" + std::to_string(k)});
  const double sp = relative_weighted_consistency({spread, 6, std::nullopt}).value;
  int outside = 0;
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + uniform_index(rng, 30), n = 2 + uniform_index(rng, 20);
    const std::size_t keep = 1 + uniform_index(rng, 5);
    Subsets s(n);
    for (auto& sub : s)
      for (std::size_t f = 0; f < d; ++f)
        if (uniform_index(rng, keep + 1) == 0) sub.push_back("f" + std::to_string(f));
    const double v = relative_weighted_consistency({s, d, std::nullopt}).value;
    if (!(v >= 0.0 && v <= 1.0)) ++outside;
  }
  return {ident == 1.0 && sp == 0.0 && outside == 0,
          fmt("identical %.6f, spread %.6f, %d/1000 random systems outside [0,1]", ident, sp, outside)};
}

Outcome_ clustering_oracles() {
  // Spearman vs rank-then-Pearson
  Rng rng(505);
  std::normal_distribution<double> g;
  Matrix x(60, 8);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = j % 2 ? std::round(g(rng) * 2.0) : g(rng) + 0.3 * x(i, 0);
  const auto s = spearman_matrix(x);
  double sp_err = 0.0;
  for (Eigen::Index a = 0; a < x.cols(); ++a)
    for (Eigen::Index b = 0; b < x.cols(); ++b) {
      std::vector<double> u(x.col(a).data(), x.col(a).data() + x.rows()), v(x.col(b).data(), x.col(b).data() + x.rows());
      sp_err = std::max(sp_err, std::abs(s.corr(a, b) - oracle::brute_spearman(u, v)));
    }

  // {1,2} join at 1, then {1,2}+{3} at max(4, 3) = 4
  Matrix d(3, 3);
  d << 0, 1, 4, 1, 0, 3, 4, 3, 0;
  const auto tree = agglomerate_complete(d);
  const bool trace = tree.merges.size() == 2 && tree.merges[0].left == 1 && tree.merges[0].right == 2 &&
                     tree.merges[0].height == 1.0 && tree.merges[1].left == 3 && tree.merges[1].right == 4 &&
                     tree.merges[1].height == 4.0;

  // 6 groups of 8 at rho = 0.8, 12 ungrouped features
  int recovered = 0;
  for (int seed = 1; seed <= 10; ++seed) {
    SynthSpec spec;
    spec.n = 400;
    spec.p = 60;
    spec.groups.assign(6, {8, 0.8});
    spec.seed = static_cast<std::uint64_t>(seed);
    const auto labels = cluster_features(generate(spec).data).assignment.labels;
    bool exact = true;
    for (std::size_t a = 0; a < 60; ++a)
      for (std::size_t b = a + 1; b < 60; ++b) {
        const bool same_truth = a < 48 && b < 48 && a / 8 == b / 8;
        if ((labels[a] == labels[b]) != same_truth) exact = false;
      }
    recovered += exact;
  }
  return {sp_err <= 1e-12 && trace && recovered >= 8,
          fmt("spearman max diff %.1e, 3-point trace %s, planted groups exact on %d/10 seeds", sp_err,
              trace ? "ok" : "wrong", recovered)};
}

Outcome_ correlation_dilution() {
  // one relevant feature plus k-1 correlated copies (rho 0.9), 20 columns
  const std::vector<std::size_t> copies{1, 3, 5};
  std::vector<double> mean_imp;
  for (std::size_t k : copies) {
    double total = 0.0;
    for (int seed = 1; seed <= 10; ++seed) {
      SynthSpec spec;
      spec.n = 300;
      spec.p = 20;
      spec.groups = {{k, 0.9}};
      spec.relevant = {0};
      spec.beta = {1.0};
      spec.target_censoring = 0.3;
      spec.seed = derive_seed(606, seed);
      const auto data = normalize(generate(spec).data).first;
      const auto imp = survival_forest_importance(data.features, data.outcome(), ForestParams{},
                                                  derive_seed(607, seed));
      double per_copy = 0.0;
      for (std::size_t j = 0; j < k; ++j) per_copy += imp.importance[j];
      total += per_copy / static_cast<double>(k);
    }
    mean_imp.push_back(total / 10.0);
  }
  return {mean_imp[0] >= mean_imp[1] && mean_imp[1] >= mean_imp[2],
          fmt("mean per-copy importance k=1 %.5f, k=3 %.5f, k=5 %.5f", mean_imp[0], mean_imp[1], mean_imp[2])};
}

// ---------------------------------------------------------------------------
// Shared sweeps on the planted-group dataset

SynthSpec planted_spec(std::uint64_t seed, bool null_effects = false) {
  SynthSpec spec;
  spec.n = 400;
  spec.p = 60;
  spec.groups.assign(6, {8, 0.9});
  if (!null_effects) {
    spec.relevant = {0, 8, 16, 48, 49};
    spec.beta = {1.0, -0.8, 0.7, 0.8, -0.6};
  }
  spec.target_censoring = 0.6;
  spec.seed = seed;
  return spec;
}

struct Sweep {
  RunResult result;
  GroundTruth truth;
  double seconds = 0.0;
};

Sweep run_sweep(std::uint64_t seed, bool null_effects, const std::vector<ThresholdId>& thresholds) {
  RunConfig config;
  config.synthetic = planted_spec(seed, null_effects);
  config.master_seed = seed;
  config.n_bootstraps = kSweepBootstraps;
  config.thresholds = thresholds;
  config.validate();
  const auto synth = generate(*config.synthetic);
  Sweep s;
  s.truth = synth.truth;
  const auto t0 = Clock::now();
  s.result = run_experiment(config, synth.data, synth.truth);
  s.seconds = seconds_since(t0);
  return s;
}

Outcome_ clustering_benefit(const std::vector<Sweep>& sweeps) {
  std::map<std::string, std::pair<double, double>> sums;  // threshold -> (plain, clustered)
  for (const auto& s : sweeps)
    for (const auto& row : threshold_summary(s.result.records)) {
      sums[row.threshold].first += row.plain.value_or(0.0) / static_cast<double>(sweeps.size());
      sums[row.threshold].second += row.clustered.value_or(0.0) / static_cast<double>(sweeps.size());
    }
  int wins = 0;
  std::string table;
  for (const auto& [thr, v] : sums) {
    wins += v.second >= v.first;
    table += fmt(" %s %.4f/%.4f", thr.c_str(), v.second, v.first);
  }
  double worst = 0.0;
  for (const auto& s : sweeps) worst = std::max(worst, s.seconds);
  return {wins >= 7 && sums.size() == 9,
          fmt("clustered >= plain on %d/%zu thresholds (clustered/plain:%s); slowest seed %.0f s", wins, sums.size(),
              table.c_str(), worst)};
}

Outcome_ glmboost_ensemble_stability(const std::vector<Sweep>& sweeps) {
  int seeds_ok = 0;
  std::string detail;
  for (const auto& s : sweeps) {
    std::optional<double> individual;
    std::map<std::string, std::pair<double, int>> ens;
    for (const auto& r : s.result.records) {
      if (r.key.selector != SelectorId::GLMBOOST || r.key.clustered) continue;
      if (r.key.individual()) individual = r.point.stability;
      else {
        ens[r.key.aggregator_name()].first += r.point.stability;
        ++ens[r.key.aggregator_name()].second;
      }
    }
    bool all = individual.has_value() && ens.size() == kAllAggregators.size();
    detail += fmt(" [individual %.3f;", individual.value_or(-1.0));
    for (const auto& [agg, v] : ens) {
      const double mean = v.first / v.second;
      if (!(individual && mean > *individual)) all = false;
      detail += fmt(" %s %.3f", agg.c_str(), mean);
    }
    detail += "]";
    seeds_ok += all;
  }
  return {2 * seeds_ok > static_cast<int>(sweeps.size()),
          fmt("every aggregator above individual on %d/%zu seeds;%s", seeds_ok, sweeps.size(), detail.c_str())};
}

Outcome_ signal_recovery(const std::vector<Sweep>& sweeps) {
  int seeds_ok = 0;
  std::string detail;
  for (const auto& s : sweeps) {
    const auto consensus = consensus_from_records(s.result.records, 10);
    const std::set<std::string> chosen(consensus.features.begin(), consensus.features.end());
    const auto& cl = *s.result.clustering;
    int found = 0;
    for (const auto& f : s.truth.relevant) {
      const auto j = static_cast<std::size_t>(
          std::find(cl.feature_names.begin(), cl.feature_names.end(), f) - cl.feature_names.begin());
      const int label = cl.assignment.labels[j];
      const std::string rep = cl.feature_names[cl.assignment.representatives[static_cast<std::size_t>(label - 1)]];
      found += chosen.count(f) || chosen.count(rep);
    }
    seeds_ok += found >= 4;
    detail += fmt(" %d", found);
  }
  return {seeds_ok >= 4, fmt(">= 4 of 5 planted features on %d/%zu seeds (per seed:%s)", seeds_ok, sweeps.size(),
                             detail.c_str())};
}

// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome_ determinism_audit() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "efsc_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const nlohmann::json config = {
      {"synthetic",
       {{"n", 150}, {"p", 16}, {"groups", {{{"size", 4}, {"rho", 0.85}}}}, {"relevant", {0, 5}}, {"beta", {1.0, -0.7}},
        {"target_censoring", 0.4}, {"seed", 9}}},
      {"selectors",
       {"UNI", "LASSO", "ENET", "GLMBOOST", "COXBOOST", {{"id", "RSF"}, {"params", {{"n_trees", 30}}}}}},
      {"clustering", "both"},
      {"n_bootstraps", 4},
      {"folds", 3},
      {"repeats", 2},
      {"master_seed", 77}};
  std::ofstream(root / "config.json") << config.dump(2);
  std::vector<std::string> summaries;
  std::string codes;
  for (int threads : {1, 3, 1}) {
    const fs::path out = root / ("t" + std::to_string(threads) + "_" + std::to_string(summaries.size()));
    const std::string cmd = std::string(EFSC_CLI_PATH) + " run --config " + (root / "config.json").string() +
                            " --out " + out.string() + " --threads " + std::to_string(threads) + " > /dev/null 2>&1";
    codes += std::to_string(std::system(cmd.c_str())) + " ";
    summaries.push_back(slurp(out / "summary.csv"));
  }
  const bool same = !summaries[0].empty() && summaries[0] == summaries[1] && summaries[0] == summaries[2];
  fs::remove_all(root);
  return {same, fmt("threads 1/3/1 summaries %s (%zu bytes, exit statuses %s)", same ? "identical" : "differ",
                    summaries[0].size(), codes.c_str())};
}

Outcome_ null_probe_sanity() {
  double total = 0.0;
  int configs = 0;
  // [filter?][clustered?]
  double part_sum[2][2] = {{0, 0}, {0, 0}};
  int part_n[2][2] = {{0, 0}, {0, 0}};
  const auto s = run_sweep(31, true, {ThresholdId::BEST_PROBE});
  for (const auto& r : s.result.records) {
    if (r.key.threshold != ThresholdId::BEST_PROBE) continue;
    total += r.point.mean_subset_size;
    ++configs;
    const int f = !is_sparse(r.key.selector), c = r.key.clustered;
    part_sum[f][c] += r.point.mean_subset_size;
    ++part_n[f][c];
  }
  auto part = [&](int f, int c) { return part_n[f][c] ? part_sum[f][c] / part_n[f][c] : 0.0; };
  const double mean = configs ? total / configs : 0.0;
  return {configs > 0 && mean <= 1.0,
          fmt("mean subset size %.3f over %d BEST_PROBE configurations (filters plain %.2f / clustered %.2f, "
              "sparse plain %.2f / clustered %.2f), %.0f s",
              mean, configs, part(1, 0), part(1, 1), part(0, 0), part(0, 1), s.seconds)};
}

}  // namespace

// Optional arguments restrict the run to the listed criterion numbers.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome_()>& fn) {
    if (!wanted(id)) return;
    Outcome_ o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
  };

  report(1, "c-index oracle", c_index_oracle);
  report(2, "gradient check", gradient_check);
  report(3, "solver consistency", solver_consistency);
  report(4, "stability metric", stability_metric);
  report(5, "spearman/linkage/cut", clustering_oracles);
  report(6, "correlation dilution", correlation_dilution);

  std::vector<Sweep> sweeps;
  std::string sweep_error;
  try {
    for (int seed = 1; seed <= kMasterSeeds && (wanted(7) || wanted(8) || wanted(9)); ++seed)
      sweeps.push_back(run_sweep(static_cast<std::uint64_t>(seed), false,
                                 {kAllThresholds.begin(), kAllThresholds.end()}));
  } catch (const std::exception& e) {
    sweep_error = e.what();
  }
  auto with_sweeps = [&](auto fn) {
    return [&, fn]() -> Outcome_ {
      if (!sweep_error.empty()) return {false, "sweep failed: " + sweep_error};
      return fn(sweeps);
    };
  };
  report(7, "clustering benefit", with_sweeps(clustering_benefit));
  report(8, "glmboost ensemble stability", with_sweeps(glmboost_ensemble_stability));
  report(9, "signal recovery", with_sweeps(signal_recovery));
  report(10, "determinism audit", determinism_audit);
  report(11, "null-probe sanity", null_probe_sanity);

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed")) << '\n';
  return failures ? 1 : 0;
}
