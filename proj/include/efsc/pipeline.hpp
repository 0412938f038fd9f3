#pragma once

// Full experiment: optional clustering pre-step, repeated cross-validation,
// bootstrap ensembles for every selector x aggregator x threshold, ridge Cox
// evaluation, stability, and the output directory.

#include "efsc/cluster.hpp"
#include "efsc/report.hpp"
#include "efsc/syndata.hpp"

#include <atomic>
#include <functional>
#include <mutex>
#include <thread>

namespace efsc {

enum class ClusteringMode { off, on, both };

struct RunConfig {
  // data: either a CSV + schema, or a synthetic spec
  std::string csv_path;
  std::string schema_path;
  std::optional<SynthSpec> synthetic;

  std::vector<SelectorConfig> selectors;
  std::vector<AggregatorId> aggregators{kAllAggregators.begin(), kAllAggregators.end()};
  std::vector<ThresholdId> thresholds{kAllThresholds.begin(), kAllThresholds.end()};
  ClusteringMode clustering = ClusteringMode::both;
  ClusterParams cluster;
  int n_bootstraps = 50;
  int folds = 5;
  int repeats = 5;
  std::optional<std::size_t> probe_count;
  bool individual = true;
  std::size_t top_k = 10;
  std::uint64_t master_seed = 1;
  std::string output_dir;
  int threads = 1;
  bool resume = false;

  RunConfig() {
    for (SelectorId id : kAllSelectors) selectors.push_back(SelectorConfig::defaults(id));
  }

  void validate() const {
    if (selectors.empty() || thresholds.empty()) throw ConfigError("sweep needs at least one selector and threshold");
    if (n_bootstraps < 1) throw ConfigError("n_bootstraps must be >= 1");
    if (folds < 2 || repeats < 1) throw ConfigError("need folds >= 2 and repeats >= 1");
    if (folds * repeats < 2) throw ConfigError("stability needs at least two fold subsets");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (probe_count && *probe_count == 0) throw ConfigError("probe count must be >= 1");
    if (!synthetic && (csv_path.empty() || schema_path.empty()))
      throw ConfigError("config needs data.csv + data.schema or a synthetic spec");
  }

  /// Parses a run config; relative data paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    static const std::set<std::string> known{"data",        "synthetic", "selectors",   "aggregators", "thresholds",
                                             "clustering",  "cluster",   "n_bootstraps", "folds",      "repeats",
                                             "probe_count", "individual", "top_k",       "master_seed", "output_dir",
                                             "threads",     "resume"};
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw ConfigError("unknown config key: " + key);
    try {
      if (j.contains("data")) {
        const auto& d = j.at("data");
        auto resolve = [&](const std::string& p) {
          const std::filesystem::path path(p);
          return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).string();
        };
        c.csv_path = resolve(d.at("csv").get<std::string>());
        c.schema_path = resolve(d.at("schema").get<std::string>());
      }
      if (j.contains("synthetic")) c.synthetic = SynthSpec::from_json(j.at("synthetic"));
      if (j.contains("selectors")) {
        c.selectors.clear();
        for (const auto& s : j.at("selectors"))
          c.selectors.push_back(s.is_string() ? SelectorConfig::defaults(selector_from_string(s.get<std::string>()))
                                              : SelectorConfig::from_json(s));
      }
      if (j.contains("aggregators")) {
        c.aggregators.clear();
        for (const auto& s : j.at("aggregators")) c.aggregators.push_back(aggregator_from_string(s.get<std::string>()));
      }
      if (j.contains("thresholds")) {
        c.thresholds.clear();
        for (const auto& s : j.at("thresholds")) c.thresholds.push_back(threshold_from_string(s.get<std::string>()));
      }
      const std::string mode = j.value("clustering", std::string("both"));
      if (mode == "off") c.clustering = ClusteringMode::off;
      else if (mode == "on") c.clustering = ClusteringMode::on;
      else if (mode == "both") c.clustering = ClusteringMode::both;
      else throw ConfigError("clustering must be off, on or both");
      if (j.contains("cluster")) c.cluster = ClusterParams::from_json(j.at("cluster"));
      c.n_bootstraps = j.value("n_bootstraps", c.n_bootstraps);
      c.folds = j.value("folds", c.folds);
      c.repeats = j.value("repeats", c.repeats);
      if (j.contains("probe_count") && !j.at("probe_count").is_null()) c.probe_count = j.at("probe_count").get<std::size_t>();
      c.individual = j.value("individual", c.individual);
      c.top_k = j.value("top_k", c.top_k);
      c.master_seed = j.value("master_seed", c.master_seed);
      c.output_dir = j.value("output_dir", c.output_dir);
      c.threads = j.value("threads", c.threads);
      c.resume = j.value("resume", c.resume);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid run config: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    c.validate();
    return c;
  }

  /// Everything that affects results (not threads, output location or resume).
  nlohmann::json to_json() const {
    nlohmann::json sel = nlohmann::json::array(), agg = nlohmann::json::array(), thr = nlohmann::json::array();
    for (const auto& s : selectors) sel.push_back(s.to_json());
    for (auto a : aggregators) agg.push_back(std::string(to_string(a)));
    for (auto t : thresholds) thr.push_back(std::string(to_string(t)));
    nlohmann::json j{{"selectors", sel},
                     {"aggregators", agg},
                     {"thresholds", thr},
                     {"clustering", clustering == ClusteringMode::off  ? "off"
                                    : clustering == ClusteringMode::on ? "on"
                                                                       : "both"},
                     {"cluster", cluster.to_json()},
                     {"n_bootstraps", n_bootstraps},
                     {"folds", folds},
                     {"repeats", repeats},
                     {"probe_count", probe_count ? nlohmann::json(*probe_count) : nlohmann::json(nullptr)},
                     {"individual", individual},
                     {"top_k", top_k},
                     {"master_seed", master_seed}};
    if (synthetic) j["synthetic"] = synthetic->to_json();
    else j["data"] = {{"csv", csv_path}, {"schema", schema_path}};
    return j;
  }
};

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return RunConfig::from_json(j, path.parent_path());
}

struct LoadedData {
  SurvivalDataset data;
  std::optional<GroundTruth> truth;
};

inline LoadedData load_data(const RunConfig& config) {
  LoadedData out;
  if (config.synthetic) {
    auto s = generate(*config.synthetic);
    out.data = std::move(s.data);
    out.truth = std::move(s.truth);
  } else {
    out.data = load_csv(config.csv_path, load_schema(config.schema_path));
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Outcome of one configuration on one (repeat, fold).
struct FoldCell {
  std::vector<std::string> subset;
  double cindex = 0.0;
  std::string error;
};

struct RunResult {
  std::vector<ConfigRecord> records;
  std::vector<std::string> errors;
  std::optional<ClusterResult> clustering;
  std::optional<ReportSummary> report;
  std::size_t tasks_resumed = 0;

  bool partial() const { return !errors.empty(); }
};

namespace detail {

struct FoldTask {
  bool clustered = false;
  int repeat = 0;
  int fold = 0;
  std::size_t selector = 0;  // index into RunConfig::selectors

  std::string key() const {
    return std::string(clustered ? "clustered" : "plain") + "/" + std::to_string(repeat) + "/" +
           std::to_string(fold) + "/" + std::to_string(selector);
  }
};

/// Keys of every configuration one selector contributes in one mode, in
/// output order: individual forms first, then aggregator x threshold.
inline std::vector<ConfigKey> config_keys(const RunConfig& config, SelectorId selector, bool clustered) {
  std::vector<ConfigKey> keys;
  if (config.individual) {
    if (is_sparse(selector)) keys.push_back({selector, std::nullopt, std::nullopt, clustered});
    else
      for (auto t : config.thresholds) keys.push_back({selector, std::nullopt, t, clustered});
  }
  for (auto a : config.aggregators)
    for (auto t : config.thresholds) keys.push_back({selector, a, t, clustered});
  return keys;
}

/// Ridge Cox (lambda by inner CV) on the training fold restricted to a
/// subset, scored by C-index on the test fold. Memoised per subset.
class SubsetEvaluator {
 public:
  SubsetEvaluator(const SurvivalDataset& train, const SurvivalDataset& test) : train_(train), test_(test) {}

  double operator()(const std::vector<std::string>& subset) {
    std::vector<Eigen::Index> cols;
    for (const auto& name : subset) {
      const auto j = train_.index_of(name);
      if (!j) throw std::invalid_argument("subset feature not in data: " + name);
      cols.push_back(static_cast<Eigen::Index>(*j));
    }
    std::sort(cols.begin(), cols.end());
    if (const auto it = cache_.find(cols); it != cache_.end()) return it->second;
    const Matrix xtr = train_.features(Eigen::all, cols);
    const Matrix xte = test_.features(Eigen::all, cols);
    const CoxModel model = fit_ridge_cox_cv(xtr, train_.outcome());
    const double c = concordance_index(model.predict(xte), test_.outcome());
    cache_.emplace(cols, c);
    return c;
  }

 private:
  const SurvivalDataset& train_;
  const SurvivalDataset& test_;
  std::map<std::vector<Eigen::Index>, double> cache_;
};

inline std::vector<std::string> subset_names(const std::vector<std::string>& names,
                                             const std::vector<std::size_t>& kept) {
  std::vector<std::string> out;
  for (std::size_t j : kept) out.push_back(names[j]);
  std::sort(out.begin(), out.end());
  return out;
}

/// Runs one selector on one (mode, repeat, fold): preprocessing with
/// training-fold statistics, probes, bootstraps, every aggregator/threshold.
/// A selector failure marks every cell; a threshold failure marks one.
inline std::map<std::string, FoldCell> run_fold_task(const RunConfig& config, const SurvivalDataset& data,
                                                     const CvPlan& plan, const FoldTask& task) {
  const SelectorConfig& sel = config.selectors[task.selector];
  const auto keys = config_keys(config, sel.id, task.clustered);
  std::map<std::string, FoldCell> cells;
  try {
    const auto train_rows = plan.train_rows(task.repeat, task.fold + 1);  // plan labels folds 1..k
    const auto test_rows = plan.test_rows(task.repeat, task.fold + 1);
    const SurvivalDataset train_raw = subset_rows(data, train_rows);
    const SurvivalDataset test_raw = subset_rows(data, test_rows);
    const auto istats = fit_impute_stats(train_raw);
    auto [train, nstats] = normalize(impute(train_raw, istats));
    const SurvivalDataset test = normalize(impute(test_raw, istats), nstats).first;

    const std::uint64_t fold_seed = derive_seed(config.master_seed, task.clustered ? 1 : 0, task.repeat, task.fold);
    const ProbeSet probes =
        make_probes(train, config.probe_count.value_or(default_probe_count(train.p())), derive_seed(fold_seed, 0xB0));
    const std::uint64_t sel_seed = derive_seed(fold_seed, static_cast<int>(sel.id) + 1);

    SubsetEvaluator evaluate(train, test);
    auto fill = [&](const ConfigKey& key, auto&& make_subset) {
      FoldCell cell;
      try {
        cell.subset = make_subset();
        cell.cindex = evaluate(cell.subset);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cells[key.id()] = std::move(cell);
    };

    std::optional<ScoredFeatures> single;
    std::vector<ScoredFeatures> runs;
    for (const auto& key : keys) {
      if (key.individual()) {
        if (!single) single = run_selector(sel, train, probes, derive_seed(sel_seed, 0x1D));
        fill(key, [&] {
          if (!key.threshold) {
            std::vector<std::size_t> kept;
            for (std::size_t j = 0; j < single->size(); ++j)
              if (single->selected[j] && !is_probe_name(single->names[j])) kept.push_back(j);
            return subset_names(single->names, kept);
          }
          const std::span<const ScoredFeatures> one(&*single, 1);
          return subset_names(single->names, apply_threshold(one, single->scores, *key.threshold, train.p()).kept);
        });
      } else {
        if (runs.empty()) runs = run_bootstraps(train, probes, sel, config.n_bootstraps, sel_seed);
        fill(key, [&] {
          const auto agg = aggregate(runs, *key.aggregator);
          return subset_names(runs.front().names, apply_threshold(runs, agg, *key.threshold, train.p()).kept);
        });
      }
    }
  } catch (const std::exception& e) {
    for (const auto& key : keys) cells[key.id()] = FoldCell{{}, 0.0, e.what()};
  }
  return cells;
}

inline nlohmann::json cells_to_json(const std::map<std::string, FoldCell>& cells) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, c] : cells)
    j[id] = c.error.empty() ? nlohmann::json{{"subset", c.subset}, {"cindex", c.cindex}}
                            : nlohmann::json{{"error", c.error}};
  return j;
}

inline std::map<std::string, FoldCell> cells_from_json(const nlohmann::json& j) {
  std::map<std::string, FoldCell> cells;
  for (const auto& [id, c] : j.items()) {
    FoldCell cell;
    if (c.contains("error")) cell.error = c.at("error").get<std::string>();
    else {
      cell.subset = c.at("subset").get<std::vector<std::string>>();
      cell.cindex = c.at("cindex").get<double>();
    }
    cells[id] = std::move(cell);
  }
  return cells;
}

inline std::string fingerprint(const RunConfig& config, const SurvivalDataset& data) {
  nlohmann::json j = config.to_json();
  j["n"] = data.n();
  j["feature_names"] = data.feature_names;
  double checksum = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) checksum += data.time[i] * (1.0 + data.event[i]);
  j["time_checksum"] = format_fixed(checksum, 6);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mix64(std::hash<std::string>{}(j.dump()))));
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!(out << text)) throw DataError("cannot write " + path.string());
}

}  // namespace detail

/// Runs the sweep on `data`. When `config.output_dir` is set, results are
/// written there (folds.jsonl is appended as tasks finish and honoured by
/// `resume`). Records are ordered by mode, selector, then configuration, and
/// do not depend on the thread count.
inline RunResult run_experiment(const RunConfig& config, const SurvivalDataset& data,
                                const std::optional<GroundTruth>& truth = std::nullopt) {
  config.validate();
  data.validate();
  namespace fs = std::filesystem;
  RunResult result;
  const bool write = !config.output_dir.empty();
  const fs::path out_dir(config.output_dir);
  if (write) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  }

  std::vector<bool> modes;
  if (config.clustering != ClusteringMode::on) modes.push_back(false);
  if (config.clustering != ClusteringMode::off) modes.push_back(true);

  SurvivalDataset reduced;
  if (std::find(modes.begin(), modes.end(), true) != modes.end()) {
    result.clustering = cluster_features(impute(data), config.cluster);
    const auto reps = result.clustering->representative_columns();
    reduced = select_columns(data, reps);
  }
  const CvPlan plan = make_cv_plan(data.event, derive_seed(config.master_seed, 0xC5), config.folds, config.repeats);

  std::vector<detail::FoldTask> tasks;
  for (bool clustered : modes)
    for (int r = 0; r < config.repeats; ++r)
      for (int f = 0; f < config.folds; ++f)
        for (std::size_t s = 0; s < config.selectors.size(); ++s) tasks.push_back({clustered, r, f, s});

  const std::string print = detail::fingerprint(config, data);
  std::vector<std::optional<std::map<std::string, FoldCell>>> done(tasks.size());
  if (write && config.resume && fs::exists(out_dir / "folds.jsonl")) {
    std::map<std::string, std::size_t> index;
    for (std::size_t t = 0; t < tasks.size(); ++t) index[tasks[t].key()] = t;
    std::ifstream in(out_dir / "folds.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        continue;  // torn final line of an interrupted run
      }
      if (j.value("fingerprint", std::string()) != print) continue;
      const auto it = index.find(j.value("task", std::string()));
      if (it == index.end() || done[it->second]) continue;
      done[it->second] = detail::cells_from_json(j.at("cells"));
      ++result.tasks_resumed;
    }
  } else if (write) {
    std::ofstream(out_dir / "folds.jsonl", std::ios::trunc);
  }

  std::mutex log_mutex;
  std::ofstream fold_log;
  if (write) fold_log.open(out_dir / "folds.jsonl", std::ios::app);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      if (done[t]) continue;
      const auto& task = tasks[t];
      auto cells = detail::run_fold_task(config, task.clustered ? reduced : data, plan, task);
      if (write) {
        const nlohmann::json j{{"fingerprint", print}, {"task", task.key()}, {"cells", detail::cells_to_json(cells)}};
        std::lock_guard lock(log_mutex);
        fold_log << j.dump() << '\n' << std::flush;
      }
      done[t] = std::move(cells);
    }
  };
  {
    std::vector<std::jthread> pool;
    const int extra = std::min<int>(config.threads, static_cast<int>(tasks.size())) - 1;
    for (int k = 0; k < extra; ++k) pool.emplace_back(worker);
    worker();
  }

  // assemble per-configuration records in deterministic order
  std::size_t t = 0;
  for (bool clustered : modes) {
    const std::size_t universe = clustered ? reduced.p() : data.p();
    const std::size_t first = t;
    for (std::size_t s = 0; s < config.selectors.size(); ++s) {
      for (const auto& key : detail::config_keys(config, config.selectors[s].id, clustered)) {
        ConfigRecord rec;
        rec.key = key;
        rec.universe_size = universe;
        std::string error;
        for (std::size_t k = first; k < first + static_cast<std::size_t>(config.repeats * config.folds) *
                                                    config.selectors.size();
             ++k) {
          if (tasks[k].selector != s) continue;
          const FoldCell& cell = done[k]->at(key.id());
          if (!cell.error.empty()) {
            error = "repeat " + std::to_string(tasks[k].repeat + 1) + " fold " + std::to_string(tasks[k].fold + 1) +
                    ": " + cell.error;
            break;
          }
          rec.subsets.push_back(cell.subset);
          rec.cindices.push_back(cell.cindex);
        }
        if (!error.empty()) {
          result.errors.push_back(key.id() + ": " + error);
          continue;
        }
        rec.point = evaluate_configuration(key.id(), rec.subsets, rec.cindices, universe);
        result.records.push_back(std::move(rec));
      }
    }
    t = first + static_cast<std::size_t>(config.repeats * config.folds) * config.selectors.size();
  }

  if (!result.records.empty() && !write) result.report = summarize(result.records, config.top_k);
  if (!write) return result;

  std::ostringstream csv, jsonl, errors;
  write_summary_csv(result.records, csv);
  for (const auto& r : result.records) jsonl << to_json(r).dump() << '\n';
  for (const auto& e : result.errors) errors << e << '\n';
  detail::write_text(out_dir / "summary.csv", csv.str());
  detail::write_text(out_dir / "configs.jsonl", jsonl.str());
  detail::write_text(out_dir / "errors.log", errors.str());
  if (result.clustering) detail::write_text(out_dir / "cluster.json", result.clustering->to_json().dump(2) + "\n");
  if (truth) detail::write_text(out_dir / "truth.json", to_json(*truth).dump(2) + "\n");

  nlohmann::json meta{{"config", config.to_json()},
                      {"fingerprint", print},
                      {"n", data.n()},
                      {"p", data.p()},
                      {"events", data.n_events()},
                      {"configurations", result.records.size()},
                      {"failed_configurations", result.errors.size()},
                      {"fidelity_notes",
                       {"Cox partial likelihood uses Breslow ties",
                        "Harrell C-index counts pairs with t_i < t_j and an event at t_i; tied risks score 0.5",
                        "normalization uses the population standard deviation of the training fold",
                        "inner tuning folds are deterministic (sorted round-robin), not random",
                        "inner CV deviance is the cross-validated partial likelihood",
                        "forest splits score n_split random cutpoints per candidate feature by log-rank",
                        "probes are permuted copies built per fold from training data",
                        "missing values use single median/mode imputation fitted per training fold",
                        "penalized selectors pick lambda at the minimum CV deviance, not one standard error",
                        "tree cut is a simplified top-down rule (tau, min_size, gap), not the hybrid method",
                        "FREQ_HALF keeps features selected in at least half of the bootstraps",
                        "no threshold keeps a feature scored zero in every bootstrap"}}};
  if (config.clustering != ClusteringMode::off)
    meta["warnings"] = {"clustering uses the whole imputed dataset before cross-validation, so test-fold rows "
                        "influence the clustered feature set"};
  if (result.clustering) meta["representatives"] = reduced.feature_names;
  detail::write_text(out_dir / "metadata.json", meta.dump(2) + "\n");
  if (!result.records.empty()) {
    result.report = write_report(result.records, out_dir, config.top_k);
  }
  return result;
}

inline RunResult run_experiment(const RunConfig& config) {
  const auto loaded = load_data(config);
  return run_experiment(config, loaded.data, loaded.truth);
}

}  // namespace efsc
