// efsc: run, cluster, select, synth, report.
// Exit codes: 0 ok, 1 config error, 2 data error, 3 partial failures.

#include "efsc/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Common& c, bool need_config) {
  auto* opt = cmd->add_option("--config", c.config, "JSON config file");
  if (need_config) opt->required();
  cmd->add_option("--seed", c.seed, "master seed (overrides config)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

efsc::RunConfig run_config(const Common& c) {
  auto config = efsc::load_run_config(c.config);
  if (c.seed) {
    config.master_seed = *c.seed;
    if (config.synthetic) config.synthetic->seed = *c.seed;
  }
  if (!c.out.empty()) config.output_dir = c.out;
  if (c.threads) config.threads = *c.threads;
  return config;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!(out << j.dump(2) << '\n')) throw efsc::DataError("cannot write " + path.string());
}

int cmd_run(const Common& c, bool resume) {
  auto config = run_config(c);
  config.resume = config.resume || resume;
  if (config.output_dir.empty()) throw efsc::ConfigError("run needs --out or output_dir");
  const auto result = efsc::run_experiment(config);
  std::cout << result.records.size() << " configurations evaluated";
  if (result.tasks_resumed) std::cout << " (" << result.tasks_resumed << " fold tasks resumed)";
  std::cout << "; results in " << config.output_dir << '\n';
  for (const auto& e : result.errors) std::cerr << "failed: " << e << '\n';
  if (result.records.empty()) return 2;
  return result.partial() ? 3 : 0;
}

int cmd_cluster(const Common& c) {
  const auto config = run_config(c);
  const auto loaded = efsc::load_data(config);
  const auto result = efsc::cluster_features(efsc::impute(loaded.data), config.cluster);
  const fs::path out = c.out.empty() ? fs::path("cluster.json") : fs::path(c.out) / "cluster.json";
  write_json(out, result.to_json());
  std::cout << result.assignment.n_clusters() << " clusters from " << loaded.data.p() << " features -> " << out.string()
            << '\n';
  return 0;
}

/// One ensemble on the full (imputed, normalized) data using the first
/// selector/aggregator/threshold of the config unless overridden.
int cmd_select(const Common& c, const std::string& selector, const std::string& aggregator,
               const std::string& threshold) {
  const auto config = run_config(c);
  const auto loaded = efsc::load_data(config);
  efsc::EnsembleConfig ens;
  ens.selector = config.selectors.front();
  if (!selector.empty()) {
    bool found = false;
    for (const auto& s : config.selectors)
      if (efsc::to_string(s.id) == selector) ens.selector = s, found = true;
    if (!found) ens.selector = efsc::SelectorConfig::defaults(efsc::selector_from_string(selector));
  }
  ens.aggregator = aggregator.empty() ? config.aggregators.front() : efsc::aggregator_from_string(aggregator);
  ens.threshold = threshold.empty() ? config.thresholds.front() : efsc::threshold_from_string(threshold);
  ens.n_bootstraps = config.n_bootstraps;
  ens.seed = config.master_seed;
  const auto data = efsc::normalize(efsc::impute(loaded.data)).first;
  const auto probes = efsc::make_probes(data, config.probe_count.value_or(efsc::default_probe_count(data.p())),
                                        efsc::derive_seed(config.master_seed, 0xB0));
  const auto result = efsc::run_ensemble(data, probes, ens);
  const fs::path out = c.out.empty() ? fs::path("selection.json") : fs::path(c.out) / "selection.json";
  write_json(out, result.to_json());
  for (const auto& f : result.final_subset) std::cout << f << '\n';
  if (!result.note.empty()) std::cerr << "note: " << result.note << '\n';
  return 0;
}

/// Accepts a bare synthetic spec or a run config holding "synthetic".
int cmd_synth(const Common& c) {
  std::ifstream in(c.config);
  if (!in) throw efsc::ConfigError("cannot open config: " + c.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw efsc::ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  auto spec = efsc::SynthSpec::from_json(j.contains("synthetic") ? j.at("synthetic") : j);
  if (c.seed) spec.seed = *c.seed;
  const auto synth = efsc::generate(spec);
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "data.csv");
    efsc::write_csv(synth.data, csv);
    if (!csv) throw efsc::DataError("cannot write " + (dir / "data.csv").string());
  }
  write_json(dir / "schema.json", efsc::schema_for(synth.data).to_json());
  write_json(dir / "truth.json", efsc::to_json(synth.truth));
  std::cout << "n=" << synth.data.n() << " p=" << synth.data.p() << " censoring=" << synth.truth.censoring_rate
            << " -> " << dir.string() << '\n';
  return 0;
}

int cmd_report(const Common& c) {
  if (c.out.empty()) throw efsc::ConfigError("report needs --out pointing at a results directory");
  std::size_t top_k = 10;
  if (!c.config.empty()) top_k = efsc::load_run_config(c.config).top_k;
  const auto summary = efsc::report(c.out, top_k);
  std::cout << "report written to " << (fs::path(c.out) / "report.md").string() << '\n';
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustering-guided ensemble feature selection for survival data"};
  app.require_subcommand(1);
  Common run_opts, cluster_opts, select_opts, synth_opts, report_opts;
  bool resume = false;
  std::string selector, aggregator, threshold;

  auto* run = app.add_subcommand("run", "full sweep with repeated cross-validation");
  add_common(run, run_opts, true);
  run->add_flag("--resume", resume, "reuse completed fold tasks from the output directory");
  auto* cluster = app.add_subcommand("cluster", "cluster features and pick representatives");
  add_common(cluster, cluster_opts, true);
  auto* select = app.add_subcommand("select", "one ensemble on the full dataset");
  add_common(select, select_opts, true);
  select->add_option("--selector", selector);
  select->add_option("--aggregator", aggregator);
  select->add_option("--threshold", threshold);
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_opts, true);
  auto* rep = app.add_subcommand("report", "rebuild tables and plots from a results directory");
  add_common(rep, report_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(run_opts, resume);
    if (*cluster) return cmd_cluster(cluster_opts);
    if (*select) return cmd_select(select_opts, selector, aggregator, threshold);
    if (*synth) return cmd_synth(synth_opts);
    if (*rep) return cmd_report(report_opts);
  } catch (const efsc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const efsc::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
