#pragma once

#include "efsc/common.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace efsc {

enum class FeatureKind { continuous, binary };

/// Reserved name prefix for random probes; real feature names may not use it.
inline constexpr std::string_view kProbePrefix = "__probe_";

inline bool is_probe_name(std::string_view name) { return name.starts_with(kProbePrefix); }

/// Non-owning view of a right-censored outcome.
struct Outcome {
  std::span<const double> time;
  std::span<const int> event;

  std::size_t size() const { return time.size(); }
  std::size_t n_events() const {
    return static_cast<std::size_t>(std::count(event.begin(), event.end(), 1));
  }
};

using MissingMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct SurvivalDataset {
  Matrix features;  // n x p; missing cells hold NaN and are flagged in `missing`
  std::vector<double> time;
  std::vector<int> event;
  std::vector<std::string> feature_names;
  std::vector<FeatureKind> feature_kind;
  MissingMask missing;         // n x p, or empty once imputed
  std::vector<bool> constant;  // set by normalize(); empty otherwise

  std::size_t n() const { return time.size(); }
  std::size_t p() const { return feature_names.size(); }
  Outcome outcome() const { return {time, event}; }
  std::size_t n_events() const { return outcome().n_events(); }
  bool has_missing() const { return missing.size() > 0 && missing.any(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t j = 0; j < feature_names.size(); ++j)
      if (feature_names[j] == name) return j;
    return std::nullopt;
  }

  /// Throws DataError when a structural invariant is broken.
  void validate() const {
    const std::size_t n_rows = n();
    if (n_rows < 2) throw DataError("dataset needs at least 2 subjects");
    if (p() == 0) throw DataError("dataset needs at least 1 feature");
    if (event.size() != n_rows || static_cast<std::size_t>(features.rows()) != n_rows ||
        static_cast<std::size_t>(features.cols()) != p() || feature_kind.size() != p())
      throw DataError("dataset dimensions disagree");
    for (std::size_t i = 0; i < n_rows; ++i) {
      if (!(time[i] > 0.0) || !std::isfinite(time[i]))
        throw DataError("nonpositive time at row " + std::to_string(i + 1));
      if (event[i] != 0 && event[i] != 1)
        throw DataError("event outside {0,1} at row " + std::to_string(i + 1));
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : feature_names)
      if (!seen.insert(name).second) throw DataError("duplicate feature name: " + name);
    if (n_events() == 0) throw DataError("dataset has zero observed events");
  }
};

// ---------------------------------------------------------------------------
// Schema and CSV ingestion

enum class ColumnKind { continuous, binary, categorical };

struct FeatureSpec {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
};

/// Column roles for load_csv. `average` optionally collapses repeated
/// measurements into one continuous feature (mean of the non-missing cells).
struct Schema {
  std::string time_col;
  std::string event_col;
  std::vector<FeatureSpec> features;
  std::map<std::string, std::vector<std::string>> average;

  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    try {
      s.time_col = j.at("time_col").get<std::string>();
      s.event_col = j.at("event_col").get<std::string>();
      for (const auto& f : j.at("features")) {
        FeatureSpec spec;
        spec.name = f.at("name").get<std::string>();
        const std::string kind = f.value("kind", "continuous");
        if (kind == "continuous") spec.kind = ColumnKind::continuous;
        else if (kind == "binary") spec.kind = ColumnKind::binary;
        else if (kind == "categorical") spec.kind = ColumnKind::categorical;
        else throw ConfigError("unknown feature kind '" + kind + "' for " + spec.name);
        s.features.push_back(std::move(spec));
      }
      if (j.contains("average"))
        for (const auto& [name, cols] : j.at("average").items())
          s.average[name] = cols.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid schema: ") + e.what());
    }
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features) {
      const char* kind = f.kind == ColumnKind::continuous ? "continuous"
                         : f.kind == ColumnKind::binary   ? "binary"
                                                          : "categorical";
      feats.push_back({{"name", f.name}, {"kind", kind}});
    }
    nlohmann::json j{{"time_col", time_col}, {"event_col", event_col}, {"features", feats}};
    if (!average.empty()) j["average"] = average;
    return j;
  }
};

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path);
  try {
    return Schema::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("schema " + path + ": " + e.what());
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

inline bool is_missing_cell(const std::string& cell) { return cell.empty() || cell == "NA"; }

inline std::optional<double> parse_double(const std::string& cell) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Parses a CSV with a header row. Categorical columns are expanded into
/// k-1 indicators named "<col>=<level>"; the most frequent level (ties: the
/// lexicographically smallest) is the reference. Row numbers in error
/// messages count data rows from 1.
inline SurvivalDataset load_csv_stream(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV is empty");
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  auto col_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw DataError("column '" + name + "' not found in CSV header");
  };
  const std::size_t time_c = col_index(schema.time_col);
  const std::size_t event_c = col_index(schema.event_col);

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(rows.size() + 1) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    for (auto& c : cells) c = detail::trim(c);
    rows.push_back(std::move(cells));
  }
  const std::size_t n = rows.size();

  SurvivalDataset data;
  data.time.resize(n);
  data.event.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = detail::parse_double(rows[i][time_c]);
    if (!t || !(*t > 0.0) || !std::isfinite(*t))
      throw DataError("nonpositive or unparsable time at row " + std::to_string(i + 1));
    data.time[i] = *t;
    const auto e = detail::parse_double(rows[i][event_c]);
    if (!e || (*e != 0.0 && *e != 1.0))
      throw DataError("event value outside {0,1} at row " + std::to_string(i + 1));
    data.event[i] = static_cast<int>(*e);
  }

  std::vector<std::vector<double>> columns;
  std::vector<std::vector<bool>> missing_cols;
  auto add_column = [&](std::string name, FeatureKind kind, std::vector<double> values,
                        std::vector<bool> miss) {
    if (is_probe_name(name)) throw DataError("feature name uses reserved probe prefix: " + name);
    data.feature_names.push_back(std::move(name));
    data.feature_kind.push_back(kind);
    columns.push_back(std::move(values));
    missing_cols.push_back(std::move(miss));
  };

  std::set<std::string> averaged_sources;
  for (const auto& [_, cols] : schema.average) averaged_sources.insert(cols.begin(), cols.end());

  for (const auto& spec : schema.features) {
    if (averaged_sources.count(spec.name)) continue;
    const std::size_t c = col_index(spec.name);
    if (spec.kind == ColumnKind::categorical) {
      std::map<std::string, std::size_t> counts;
      for (const auto& r : rows)
        if (!detail::is_missing_cell(r[c])) ++counts[r[c]];
      std::string reference;
      std::size_t best = 0;
      for (const auto& [level, count] : counts)
        if (count > best) {
          best = count;
          reference = level;
        }
      for (const auto& [level, _] : counts) {
        if (level == reference) continue;
        std::vector<double> values(n);
        std::vector<bool> miss(n, false);
        for (std::size_t i = 0; i < n; ++i) {
          if (detail::is_missing_cell(rows[i][c])) {
            miss[i] = true;
            values[i] = std::numeric_limits<double>::quiet_NaN();
          } else {
            values[i] = rows[i][c] == level ? 1.0 : 0.0;
          }
        }
        add_column(spec.name + "=" + level, FeatureKind::binary, std::move(values), std::move(miss));
      }
      continue;
    }
    std::vector<double> values(n);
    std::vector<bool> miss(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (detail::is_missing_cell(rows[i][c])) {
        miss[i] = true;
        values[i] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const auto v = detail::parse_double(rows[i][c]);
      if (!v) throw DataError("unparsable value in column '" + spec.name + "' at row " + std::to_string(i + 1));
      if (spec.kind == ColumnKind::binary && *v != 0.0 && *v != 1.0)
        throw DataError("binary column '" + spec.name + "' has value outside {0,1} at row " +
                        std::to_string(i + 1));
      values[i] = *v;
    }
    add_column(spec.name, spec.kind == ColumnKind::binary ? FeatureKind::binary : FeatureKind::continuous,
               std::move(values), std::move(miss));
  }

  for (const auto& [name, cols] : schema.average) {
    std::vector<std::size_t> idx;
    for (const auto& col : cols) idx.push_back(col_index(col));
    std::vector<double> values(n);
    std::vector<bool> miss(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      int count = 0;
      for (std::size_t c : idx) {
        if (detail::is_missing_cell(rows[i][c])) continue;
        const auto v = detail::parse_double(rows[i][c]);
        if (!v) throw DataError("unparsable value in column '" + header[c] + "' at row " + std::to_string(i + 1));
        sum += *v;
        ++count;
      }
      miss[i] = count == 0;
      values[i] = count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / count;
    }
    add_column(name, FeatureKind::continuous, std::move(values), std::move(miss));
  }

  const std::size_t p = columns.size();
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  data.missing.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns[j][i];
      data.missing(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = missing_cols[j][i];
    }
  data.validate();
  return data;
}

inline SurvivalDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path);
  return load_csv_stream(in, schema);
}

/// Writes features + outcome as CSV (missing cells as "NA") with columns
/// time, event, then features. Values use 17 significant digits.
inline void write_csv(const SurvivalDataset& data, std::ostream& out) {
  out << "time,event";
  for (const auto& name : data.feature_names) out << ',' << name;
  out << '\n';
  out.precision(17);
  const bool masked = data.missing.size() > 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << data.time[i] << ',' << data.event[i];
    for (std::size_t j = 0; j < data.p(); ++j) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(j);
      out << ',';
      if (masked && data.missing(r, c)) out << "NA";
      else out << data.features(r, c);
    }
    out << '\n';
  }
}

inline Schema schema_for(const SurvivalDataset& data) {
  Schema s;
  s.time_col = "time";
  s.event_col = "event";
  for (std::size_t j = 0; j < data.p(); ++j)
    s.features.push_back({data.feature_names[j], data.feature_kind[j] == FeatureKind::binary
                                                     ? ColumnKind::binary
                                                     : ColumnKind::continuous});
  return s;
}

// ---------------------------------------------------------------------------
// Row and column subsetting

inline SurvivalDataset subset_rows(const SurvivalDataset& data, std::span<const std::size_t> rows) {
  SurvivalDataset out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.features.resize(n, data.features.cols());
  if (data.missing.size() > 0) out.missing.resize(n, data.features.cols());
  out.time.resize(rows.size());
  out.event.resize(rows.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    out.features.row(k) = data.features.row(r);
    if (data.missing.size() > 0) out.missing.row(k) = data.missing.row(r);
    out.time[static_cast<std::size_t>(k)] = data.time[static_cast<std::size_t>(r)];
    out.event[static_cast<std::size_t>(k)] = data.event[static_cast<std::size_t>(r)];
  }
  out.feature_names = data.feature_names;
  out.feature_kind = data.feature_kind;
  out.constant = data.constant;
  return out;
}

inline SurvivalDataset select_columns(const SurvivalDataset& data, std::span<const std::size_t> cols) {
  SurvivalDataset out;
  out.time = data.time;
  out.event = data.event;
  out.features.resize(data.features.rows(), static_cast<Eigen::Index>(cols.size()));
  if (data.missing.size() > 0) out.missing.resize(data.features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(cols[k]);
    out.features.col(static_cast<Eigen::Index>(k)) = data.features.col(c);
    if (data.missing.size() > 0) out.missing.col(static_cast<Eigen::Index>(k)) = data.missing.col(c);
    out.feature_names.push_back(data.feature_names[cols[k]]);
    out.feature_kind.push_back(data.feature_kind[cols[k]]);
    if (!data.constant.empty()) out.constant.push_back(data.constant[cols[k]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imputation

/// Per-column fill values: median for continuous, mode for binary columns.
struct ImputeStats {
  std::vector<double> fill;
};

inline ImputeStats fit_impute_stats(const SurvivalDataset& data) {
  ImputeStats stats;
  stats.fill.resize(data.p());
  const bool masked = data.missing.size() > 0;
  for (std::size_t j = 0; j < data.p(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    std::vector<double> observed;
    observed.reserve(data.n());
    for (Eigen::Index i = 0; i < data.features.rows(); ++i)
      if (!(masked && data.missing(i, c))) observed.push_back(data.features(i, c));
    if (observed.empty()) throw DataError("column '" + data.feature_names[j] + "' is entirely missing");
    if (data.feature_kind[j] == FeatureKind::binary) {
      const auto ones = std::count(observed.begin(), observed.end(), 1.0);
      stats.fill[j] = 2 * static_cast<std::size_t>(ones) > observed.size() ? 1.0 : 0.0;
    } else {
      stats.fill[j] = median(std::move(observed));
    }
  }
  return stats;
}

/// Fills missing cells. Without `stats` the fill values come from `data`
/// itself (whole-dataset mode, used by the clustering pre-step).
inline SurvivalDataset impute(const SurvivalDataset& data, const std::optional<ImputeStats>& stats = std::nullopt) {
  const ImputeStats used = stats ? *stats : fit_impute_stats(data);
  if (used.fill.size() != data.p()) throw std::invalid_argument("impute: stats do not match dataset schema");
  SurvivalDataset out = data;
  if (data.missing.size() > 0) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j)
      for (Eigen::Index i = 0; i < data.features.rows(); ++i)
        if (data.missing(i, j)) out.features(i, j) = used.fill[static_cast<std::size_t>(j)];
  }
  out.missing.resize(0, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Standardization statistics. `sd` is the population standard deviation
/// (divisor n). Binary columns carry mean 0 / sd 1 so they pass through.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<bool> constant;
  static constexpr const char* sd_convention = "population";
};

inline NormStats fit_norm_stats(const SurvivalDataset& data) {
  if (data.has_missing()) throw std::invalid_argument("normalize: data still has missing values");
  NormStats s;
  const auto n = static_cast<double>(data.n());
  for (std::size_t j = 0; j < data.p(); ++j) {
    const auto col = data.features.col(static_cast<Eigen::Index>(j));
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / n);
    const bool is_constant = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    if (data.feature_kind[j] == FeatureKind::binary) {
      s.mean.push_back(0.0);
      s.sd.push_back(1.0);
    } else {
      s.mean.push_back(mean);
      s.sd.push_back(is_constant ? 0.0 : sd);
    }
    s.constant.push_back(is_constant);
  }
  return s;
}

/// Applies (x - mean) / sd per continuous column. Columns constant in the
/// statistics' source data become all zeros and are flagged constant.
inline std::pair<SurvivalDataset, NormStats> normalize(const SurvivalDataset& data,
                                                       const std::optional<NormStats>& stats = std::nullopt) {
  NormStats used = stats ? *stats : fit_norm_stats(data);
  if (used.mean.size() != data.p()) throw std::invalid_argument("normalize: stats do not match dataset schema");
  SurvivalDataset out = data;
  for (std::size_t j = 0; j < data.p(); ++j) {
    auto col = out.features.col(static_cast<Eigen::Index>(j));
    if (used.constant[j]) col.setZero();
    else if (data.feature_kind[j] == FeatureKind::continuous)
      col = (col.array() - used.mean[j]) / used.sd[j];
  }
  out.constant = used.constant;
  return {std::move(out), std::move(used)};
}

// ---------------------------------------------------------------------------
// Random probes

struct ProbeSet {
  Matrix values;  // n x q
  std::vector<std::string> names;
  std::vector<std::size_t> origin;  // real column each probe permutes

  std::size_t size() const { return names.size(); }
};

/// Default probe count: max(10, ceil(0.1 p)).
inline std::size_t default_probe_count(std::size_t p) {
  return std::max<std::size_t>(10, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(p))));
}

inline std::string probe_name(std::size_t k) { return std::string(kProbePrefix) + std::to_string(k + 1); }

/// Probe k is a seeded uniform permutation of real column (k mod p).
inline ProbeSet make_probes(const SurvivalDataset& data, std::size_t q, std::uint64_t seed) {
  if (q == 0) throw std::invalid_argument("make_probes: q must be >= 1");
  if (data.has_missing()) throw std::invalid_argument("make_probes: data has missing values");
  const std::size_t n = data.n();
  ProbeSet probes;
  probes.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < q; ++k) {
    const std::size_t origin = k % data.p();
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, k));
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i)
      probes.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          data.features(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(origin));
    probes.names.push_back(probe_name(k));
    probes.origin.push_back(origin);
  }
  return probes;
}

inline ProbeSet subset_rows(const ProbeSet& probes, std::span<const std::size_t> rows) {
  ProbeSet out;
  out.names = probes.names;
  out.origin = probes.origin;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), probes.values.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.values.row(static_cast<Eigen::Index>(k)) = probes.values.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Stratified repeated cross-validation

struct CvPlan {
  int folds = 5;
  int repeats = 5;
  std::vector<std::vector<int>> assignments;  // [repeat][subject] -> fold label 1..folds
  std::uint64_t master_seed = 0;

  std::vector<std::size_t> test_rows(int repeat, int fold) const {
    std::vector<std::size_t> rows;
    const auto& a = assignments.at(static_cast<std::size_t>(repeat));
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] == fold) rows.push_back(i);
    return rows;
  }
  std::vector<std::size_t> train_rows(int repeat, int fold) const {
    std::vector<std::size_t> rows;
    const auto& a = assignments.at(static_cast<std::size_t>(repeat));
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] != fold) rows.push_back(i);
    return rows;
  }
};

/// Stratified on the event indicator: per repeat, events and censored
/// subjects are shuffled separately and dealt round-robin over the folds.
inline CvPlan make_cv_plan(std::span<const int> event, std::uint64_t seed, int folds = 5, int repeats = 5) {
  const std::size_t n = event.size();
  const auto n_events = static_cast<std::size_t>(std::count(event.begin(), event.end(), 1));
  if (n < 10) throw DataError("cross-validation needs n >= 10");
  if (n_events < static_cast<std::size_t>(folds))
    throw DataError("cross-validation needs at least " + std::to_string(folds) + " events, found " +
                    std::to_string(n_events));
  CvPlan plan;
  plan.folds = folds;
  plan.repeats = repeats;
  plan.master_seed = seed;
  for (int r = 0; r < repeats; ++r) {
    std::vector<std::size_t> events, censored;
    for (std::size_t i = 0; i < n; ++i) (event[i] == 1 ? events : censored).push_back(i);
    Rng rng(derive_seed(seed, r));
    std::shuffle(events.begin(), events.end(), rng);
    std::shuffle(censored.begin(), censored.end(), rng);
    std::vector<int> labels(n, 0);
    std::size_t k = 0;
    for (std::size_t i : events) labels[i] = static_cast<int>(k++ % static_cast<std::size_t>(folds)) + 1;
    for (std::size_t i : censored) labels[i] = static_cast<int>(k++ % static_cast<std::size_t>(folds)) + 1;
    plan.assignments.push_back(std::move(labels));
  }
  return plan;
}

inline CvPlan make_cv_plan(const SurvivalDataset& data, std::uint64_t seed) {
  return make_cv_plan(data.event, seed);
}

}  // namespace efsc
