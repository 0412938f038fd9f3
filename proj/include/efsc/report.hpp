#pragma once

// Result records, CSV/JSON persistence, threshold summaries, improvement
// over individual forms, consensus features, and SVG scatter plots.

#include "efsc/ensemble.hpp"
#include "efsc/stability.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace efsc {

inline constexpr std::string_view kIndividual = "INDIVIDUAL";
inline constexpr std::string_view kNoThreshold = "NONE";

/// One cell of the sweep. Individual forms carry no aggregator; individual
/// sparse selectors carry no threshold either.
struct ConfigKey {
  SelectorId selector = SelectorId::UNI;
  std::optional<AggregatorId> aggregator;
  std::optional<ThresholdId> threshold;
  bool clustered = false;

  bool individual() const { return !aggregator.has_value(); }
  std::string aggregator_name() const {
    return aggregator ? std::string(to_string(*aggregator)) : std::string(kIndividual);
  }
  std::string threshold_name() const {
    return threshold ? std::string(to_string(*threshold)) : std::string(kNoThreshold);
  }
  std::string id() const {
    return std::string(to_string(selector)) + "|" + aggregator_name() + "|" + threshold_name() + "|" +
           (clustered ? "clustered" : "plain");
  }
  static ConfigKey parse(std::string_view selector, std::string_view aggregator, std::string_view threshold,
                         bool clustered) {
    ConfigKey k;
    k.selector = selector_from_string(selector);
    if (aggregator != kIndividual) k.aggregator = aggregator_from_string(aggregator);
    if (threshold != kNoThreshold) k.threshold = threshold_from_string(threshold);
    k.clustered = clustered;
    return k;
  }
};

struct ConfigRecord {
  ConfigKey key;
  std::size_t universe_size = 0;
  std::vector<std::vector<std::string>> subsets;  // one per (repeat, fold)
  std::vector<double> cindices;
  EvaluationPoint point;
};

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline nlohmann::json to_json(const ConfigRecord& r) {
  return {{"id", r.key.id()},
          {"selector", std::string(to_string(r.key.selector))},
          {"aggregator", r.key.aggregator_name()},
          {"threshold", r.key.threshold_name()},
          {"clustered", r.key.clustered},
          {"universe_size", r.universe_size},
          {"subsets", r.subsets},
          {"cindices", r.cindices},
          {"stability", r.point.stability},
          {"mean_cindex", r.point.mean_cindex},
          {"distance", r.point.distance},
          {"mean_subset_size", r.point.mean_subset_size},
          {"degenerate", r.point.degenerate}};
}

inline ConfigRecord record_from_json(const nlohmann::json& j) {
  ConfigRecord r;
  r.key = ConfigKey::parse(j.at("selector").get<std::string>(), j.at("aggregator").get<std::string>(),
                           j.at("threshold").get<std::string>(), j.at("clustered").get<bool>());
  r.universe_size = j.at("universe_size").get<std::size_t>();
  r.subsets = j.at("subsets").get<std::vector<std::vector<std::string>>>();
  r.cindices = j.at("cindices").get<std::vector<double>>();
  r.point.config_id = r.key.id();
  r.point.stability = j.at("stability").get<double>();
  r.point.mean_cindex = j.at("mean_cindex").get<double>();
  r.point.distance = j.at("distance").get<double>();
  r.point.mean_subset_size = j.at("mean_subset_size").get<double>();
  r.point.degenerate = j.value("degenerate", false);
  return r;
}

inline void write_summary_csv(const std::vector<ConfigRecord>& records, std::ostream& out) {
  out << "config_id,selector,aggregator,threshold,clustering,stability,mean_cindex,distance,mean_subset_size\n";
  for (const auto& r : records)
    out << r.key.id() << ',' << to_string(r.key.selector) << ',' << r.key.aggregator_name() << ','
        << r.key.threshold_name() << ',' << (r.key.clustered ? "on" : "off") << ',' << format_fixed(r.point.stability)
        << ',' << format_fixed(r.point.mean_cindex) << ',' << format_fixed(r.point.distance) << ','
        << format_fixed(r.point.mean_subset_size) << '\n';
}

inline std::vector<ConfigRecord> load_records(const std::filesystem::path& dir) {
  std::ifstream in(dir / "configs.jsonl");
  if (!in) throw DataError("no configs.jsonl in " + dir.string());
  std::vector<ConfigRecord> records;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) records.push_back(record_from_json(nlohmann::json::parse(line)));
  return records;
}

// ---------------------------------------------------------------------------
// Summaries

struct ThresholdRow {
  std::string threshold;
  std::optional<double> plain;      // mean distance without clustering
  std::optional<double> clustered;  // mean distance with clustering
};

/// Mean distance of every configuration (ensemble or individual) using each
/// threshold, split by clustering mode. Rows follow the declared threshold
/// order and only thresholds present in the records appear.
inline std::vector<ThresholdRow> threshold_summary(const std::vector<ConfigRecord>& records) {
  std::vector<ThresholdRow> rows;
  for (ThresholdId t : kAllThresholds) {
    double sum[2] = {0.0, 0.0};
    int count[2] = {0, 0};
    for (const auto& r : records)
      if (r.key.threshold == t) {
        sum[r.key.clustered] += r.point.distance;
        ++count[r.key.clustered];
      }
    if (count[0] + count[1] == 0) continue;
    ThresholdRow row;
    row.threshold = std::string(to_string(t));
    if (count[0]) row.plain = sum[0] / count[0];
    if (count[1]) row.clustered = sum[1] / count[1];
    rows.push_back(row);
  }
  return rows;
}

struct Improvement {
  double absolute = 0.0;
  double percent = 0.0;
};

inline Improvement improvement(double individual_distance, double ensemble_distance) {
  Improvement out;
  out.absolute = ensemble_distance - individual_distance;
  out.percent = individual_distance > 0.0 ? 100.0 * out.absolute / individual_distance : 0.0;
  return out;
}

/// The individual form an ensemble is compared against: same selector and
/// clustering mode; filters also match the threshold.
inline const ConfigRecord* individual_counterpart(const std::vector<ConfigRecord>& records, const ConfigKey& key) {
  for (const auto& r : records) {
    if (!r.key.individual() || r.key.selector != key.selector || r.key.clustered != key.clustered) continue;
    if (is_sparse(key.selector) || r.key.threshold == key.threshold) return &r;
  }
  return nullptr;
}

struct SelectorBest {
  SelectorId selector = SelectorId::UNI;
  std::string best_config;
  double best_distance = 0.0;
  std::optional<Improvement> best_vs_individual;
  std::string largest_gain_config;
  std::optional<Improvement> largest_gain;
};

inline std::vector<SelectorBest> selector_summary(const std::vector<ConfigRecord>& records) {
  std::vector<SelectorBest> out;
  for (SelectorId s : kAllSelectors) {
    const ConfigRecord* best = nullptr;
    SelectorBest row;
    row.selector = s;
    for (const auto& r : records) {
      if (r.key.selector != s || r.key.individual()) continue;
      if (!best || r.point.distance > best->point.distance) best = &r;
      if (const auto* ind = individual_counterpart(records, r.key)) {
        const auto gain = improvement(ind->point.distance, r.point.distance);
        if (!row.largest_gain || gain.absolute > row.largest_gain->absolute) {
          row.largest_gain = gain;
          row.largest_gain_config = r.key.id();
        }
      }
    }
    if (!best) continue;
    row.best_config = best->key.id();
    row.best_distance = best->point.distance;
    if (const auto* ind = individual_counterpart(records, best->key))
      row.best_vs_individual = improvement(ind->point.distance, best->point.distance);
    out.push_back(row);
  }
  return out;
}

inline ConsensusResult consensus_from_records(const std::vector<ConfigRecord>& records, std::size_t top_k = 10) {
  std::vector<EvaluationPoint> points;
  std::map<std::string, std::vector<std::vector<std::string>>> subsets;
  for (const auto& r : records) {
    points.push_back(r.point);
    subsets[r.key.id()] = r.subsets;
  }
  return consensus_features(points, subsets, top_k);
}

// ---------------------------------------------------------------------------
// SVG scatter: stability (x) vs mean C-index (y), one file per selector.

namespace detail {

inline const char* threshold_colour(const std::optional<ThresholdId>& t) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"};
  if (!t) return "#7ec8e3";
  return palette[static_cast<int>(*t)];
}

inline std::string marker(const ConfigKey& key, double x, double y) {
  std::ostringstream s;
  const char* colour = threshold_colour(key.threshold);
  const std::string fill = key.clustered ? colour : "none";
  s << "<g stroke=\"" << colour << "\" fill=\"" << fill << "\" stroke-width=\"1.5\">";
  const double r = 5.0;
  if (key.individual()) {
    s << "<polygon points=\"";
    for (int k = 0; k < 10; ++k) {
      const double ang = -M_PI / 2 + k * M_PI / 5;
      const double rad = k % 2 == 0 ? r * 1.4 : r * 0.6;
      s << format_fixed(x + rad * std::cos(ang), 2) << ',' << format_fixed(y + rad * std::sin(ang), 2) << ' ';
    }
    s << "\"/>";
  } else {
    switch (*key.aggregator) {
      case AggregatorId::MEAN_SCORE:
        s << "<circle cx=\"" << format_fixed(x, 2) << "\" cy=\"" << format_fixed(y, 2) << "\" r=\"" << r << "\"/>";
        break;
      case AggregatorId::MEDIAN_RANK:
        s << "<rect x=\"" << format_fixed(x - r, 2) << "\" y=\"" << format_fixed(y - r, 2) << "\" width=\"" << 2 * r
          << "\" height=\"" << 2 * r << "\"/>";
        break;
      case AggregatorId::FREQ:
        s << "<polygon points=\"" << format_fixed(x, 2) << ',' << format_fixed(y - r, 2) << ' '
          << format_fixed(x - r, 2) << ',' << format_fixed(y + r, 2) << ' ' << format_fixed(x + r, 2) << ','
          << format_fixed(y + r, 2) << "\"/>";
        break;
      case AggregatorId::RRA:
        s << "<polygon points=\"" << format_fixed(x, 2) << ',' << format_fixed(y - r, 2) << ' '
          << format_fixed(x + r, 2) << ',' << format_fixed(y, 2) << ' ' << format_fixed(x, 2) << ','
          << format_fixed(y + r, 2) << ' ' << format_fixed(x - r, 2) << ',' << format_fixed(y, 2) << "\"/>";
        break;
    }
  }
  s << "</g>\n";
  return s.str();
}

}  // namespace detail

inline std::string scatter_svg(const std::vector<ConfigRecord>& records, SelectorId selector) {
  constexpr double W = 640, H = 480, L = 70, R = 200, T = 40, B = 60;
  double ymin = 1.0, ymax = 0.0;
  for (const auto& r : records)
    if (r.key.selector == selector) {
      ymin = std::min(ymin, r.point.mean_cindex);
      ymax = std::max(ymax, r.point.mean_cindex);
    }
  if (ymin > ymax) ymin = 0.0, ymax = 1.0;
  ymin = std::max(0.0, std::floor((ymin - 0.02) * 20.0) / 20.0);
  ymax = std::min(1.0, std::ceil((ymax + 0.02) * 20.0) / 20.0);
  if (!(ymax > ymin)) ymax = ymin + 0.05;
  auto px = [&](double s) { return L + s * (W - L - R); };
  auto py = [&](double c) { return H - B - (c - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"24\" font-size=\"15\">" << to_string(selector) << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double s = k / 5.0;
    svg << "<text x=\"" << format_fixed(px(s), 1) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
        << format_fixed(s, 1) << "</text>\n";
    const double c = ymin + (ymax - ymin) * k / 5.0;
    svg << "<text x=\"" << L - 8 << "\" y=\"" << format_fixed(py(c) + 4, 1) << "\" text-anchor=\"end\">"
        << format_fixed(c, 2) << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">Stability</text>\n";
  svg << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 18 " << (T + H - B) / 2
      << ")\" text-anchor=\"middle\">Mean C-index</text>\n";
  for (const auto& r : records)
    if (r.key.selector == selector) svg << detail::marker(r.key, px(r.point.stability), py(r.point.mean_cindex));

  double ly = T + 10;
  const double lx = W - R + 20;
  for (ThresholdId t : kAllThresholds) {
    svg << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << detail::threshold_colour(t) << "\"/><text x=\"" << lx + 16 << "\" y=\"" << ly << "\">" << to_string(t)
        << "</text>\n";
    ly += 16;
  }
  ly += 8;
  const char* shapes[] = {"circle: MEAN_SCORE", "square: MEDIAN_RANK", "triangle: FREQ", "diamond: RRA",
                          "star: individual", "filled: clustered", "hollow: no clustering"};
  for (const char* s : shapes) {
    svg << "<text x=\"" << lx << "\" y=\"" << ly << "\">" << s << "</text>\n";
    ly += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

struct ReportSummary {
  std::vector<ThresholdRow> thresholds;
  std::vector<SelectorBest> selectors;
  ConsensusResult consensus;
  std::vector<std::string> warnings;
};

inline std::string render_report(const ReportSummary& s) {
  std::ostringstream md;
  bool any_plain = false, any_clustered = false;
  for (const auto& row : s.thresholds) {
    any_plain = any_plain || row.plain.has_value();
    any_clustered = any_clustered || row.clustered.has_value();
  }
  md << "# Feature selection sweep report\n\n## Mean distance from origin per threshold\n\n";
  md << "| threshold |";
  if (any_plain) md << " no clustering |";
  if (any_clustered) md << " clustering |";
  md << "\n|---|";
  if (any_plain) md << "---|";
  if (any_clustered) md << "---|";
  md << '\n';
  for (const auto& row : s.thresholds) {
    md << "| " << row.threshold << " |";
    if (any_plain) md << ' ' << (row.plain ? format_fixed(*row.plain, 2) : "-") << " |";
    if (any_clustered) md << ' ' << (row.clustered ? format_fixed(*row.clustered, 2) : "-") << " |";
    md << '\n';
  }
  if (!any_clustered) md << "\nNo clustered runs present; clustered column omitted.\n";
  if (!any_plain) md << "\nNo unclustered runs present; unclustered column omitted.\n";

  md << "\n## Best ensemble per selector\n\n| selector | best configuration | distance | change vs individual | "
        "largest gain configuration | largest gain |\n|---|---|---|---|---|---|\n";
  auto fmt_gain = [](const std::optional<Improvement>& g) {
    return g ? format_fixed(g->absolute, 2) + " (" + format_fixed(g->percent, 0) + "%)" : std::string("-");
  };
  for (const auto& b : s.selectors)
    md << "| " << to_string(b.selector) << " | " << b.best_config << " | " << format_fixed(b.best_distance, 3) << " | "
       << fmt_gain(b.best_vs_individual) << " | " << (b.largest_gain_config.empty() ? "-" : b.largest_gain_config)
       << " | " << fmt_gain(b.largest_gain) << " |\n";

  md << "\n## Consensus features\n\nSelected by at least " << s.consensus.votes_needed << " of the top "
     << s.consensus.top_configs.size() << " configurations:\n\n";
  for (const auto& f : s.consensus.features) md << "- " << f << '\n';
  if (s.consensus.features.empty()) md << "(none)\n";
  for (const auto& w : s.warnings) md << "\n> warning: " << w << '\n';
  return md.str();
}

inline ReportSummary summarize(const std::vector<ConfigRecord>& records, std::size_t top_k = 10) {
  if (records.empty()) throw DataError("no results to report");
  ReportSummary s;
  s.thresholds = threshold_summary(records);
  s.selectors = selector_summary(records);
  s.consensus = consensus_from_records(records, top_k);
  if (s.consensus.fewer_than_top_k)
    s.warnings.push_back("fewer than " + std::to_string(top_k) + " configurations; consensus uses all of them");
  return s;
}

/// Writes report.md, thresholds.csv, consensus.json and one scatter SVG per
/// selector into `dir`. SVG failures become warnings.
inline ReportSummary write_report(const std::vector<ConfigRecord>& records, const std::filesystem::path& dir,
                                  std::size_t top_k = 10) {
  ReportSummary s = summarize(records, top_k);
  {
    std::ofstream csv(dir / "thresholds.csv");
    csv << "threshold,no_clustering,clustering\n";
    for (const auto& row : s.thresholds)
      csv << row.threshold << ',' << (row.plain ? format_fixed(*row.plain) : "") << ','
          << (row.clustered ? format_fixed(*row.clustered) : "") << '\n';
  }
  {
    std::ofstream js(dir / "consensus.json");
    js << nlohmann::json{{"features", s.consensus.features},
                         {"top_configs", s.consensus.top_configs},
                         {"votes_needed", s.consensus.votes_needed}}
              .dump(2)
       << '\n';
  }
  for (SelectorId sel : kAllSelectors) {
    if (std::none_of(records.begin(), records.end(), [&](const ConfigRecord& r) { return r.key.selector == sel; }))
      continue;
    const auto path = dir / ("scatter_" + std::string(to_string(sel)) + ".svg");
    std::ofstream svg(path);
    if (!svg || !(svg << scatter_svg(records, sel))) s.warnings.push_back("could not write " + path.string());
  }
  std::ofstream(dir / "report.md") << render_report(s);
  return s;
}

/// Regenerates the summaries from a completed results directory.
inline ReportSummary report(const std::filesystem::path& dir, std::size_t top_k = 10) {
  return write_report(load_records(dir), dir, top_k);
}

}  // namespace efsc
