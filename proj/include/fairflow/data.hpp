#pragma once

// Tabular datasets: schema-driven CSV loading, stratified nested folds,
// synthetic two-cloud data, and train-only standardization.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fairflow/error.hpp"
#include "fairflow/random.hpp"
#include "fairflow/tensor.hpp"

namespace fairflow {

enum class ColumnKind { kContinuous, kDiscrete };

inline const char* to_string(ColumnKind k) { return k == ColumnKind::kDiscrete ? "discrete" : "continuous"; }

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  std::vector<std::string> categories;  // non-empty: string values coded by position
};

/// Maps the sensitive column to group ids. Either `groups` lists accepted
/// values (id = position, other values are filtered out) or `outside` gives a
/// numeric interval [lo, hi] whose complement is group 1.
struct SensitiveSpec {
  std::string column;
  std::vector<std::string> groups;
  std::optional<std::pair<double, double>> outside;
};

/// Binary label rule: value in `positive`, or numeric comparison.
struct LabelSpec {
  std::string column;
  std::vector<std::string> positive;
  std::optional<double> greater_than;
  std::optional<double> less_equal;
};

struct FilterSpec {
  std::string column;
  std::optional<double> min;
  std::optional<double> max;
  std::vector<std::string> exclude;
};

struct SchemaSpec {
  std::string name = "dataset";
  char delimiter = ',';
  bool header = true;
  std::vector<std::string> columns;  // names for headerless files
  std::vector<ColumnSpec> features;
  SensitiveSpec sensitive;
  LabelSpec label;
  std::vector<FilterSpec> filters;
  int protected_group = 1;
  std::vector<std::string> missing_tokens = {"", "?", "NA", "N/A"};
};

struct Dataset {
  Tensor x;
  std::vector<int> s;
  Eigen::VectorXd y;
  std::vector<ColumnSpec> schema;
  std::string provenance;
  int protected_group = 1;
  std::size_t dropped_missing = 0;
  std::size_t dropped_filtered = 0;

  std::size_t size() const { return s.size(); }
  Index dim() const { return x.cols(); }

  int num_groups() const { return s.empty() ? 0 : *std::max_element(s.begin(), s.end()) + 1; }

  std::vector<std::size_t> group_counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(num_groups()), 0);
    for (int g : s) ++c[static_cast<std::size_t>(g)];
    return c;
  }

  std::vector<std::size_t> rows_of_group(int g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] == g) out.push_back(i);
    return out;
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.schema = schema;
    out.provenance = provenance;
    out.protected_group = protected_group;
    std::vector<Index> idx(rows.begin(), rows.end());
    out.x = gather_rows(x, idx);
    out.y.resize(static_cast<Index>(rows.size()));
    out.s.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.s.push_back(s[rows[i]]);
      out.y(static_cast<Index>(i)) = y(static_cast<Index>(rows[i]));
    }
    return out;
  }

  /// Throws DataError unless rows agree and groups are 0..k-1 with k >= 2, all nonempty.
  void validate() const {
    if (static_cast<std::size_t>(x.rows()) != s.size() || static_cast<std::size_t>(y.size()) != s.size())
      throw DataError("dataset: X, s and y disagree on row count");
    if (static_cast<std::size_t>(x.cols()) != schema.size()) throw DataError("dataset: schema width differs from X");
    for (int g : s)
      if (g < 0) throw DataError("dataset: negative group id");
    const auto counts = group_counts();
    if (counts.size() < 2) throw DataError("dataset: need at least two sensitive groups");
    for (std::size_t g = 0; g < counts.size(); ++g)
      if (counts[g] == 0) throw DataError("dataset: group " + std::to_string(g) + " is empty");
  }
};

// ---------------------------------------------------------------------------
// Schema JSON

inline SchemaSpec schema_from_json(const nlohmann::json& j) {
  SchemaSpec s;
  try {
    s.name = j.value("name", s.name);
    const std::string delim = j.value("delimiter", std::string(","));
    if (delim.size() != 1) throw ConfigError("schema: delimiter must be a single character");
    s.delimiter = delim[0];
    s.header = j.value("header", true);
    s.columns = j.value("columns", std::vector<std::string>{});
    if (!s.header && s.columns.empty()) throw ConfigError("schema: headerless files need a 'columns' list");
    for (const auto& f : j.at("features")) {
      ColumnSpec c;
      c.name = f.at("name").get<std::string>();
      const std::string kind = f.value("kind", std::string("continuous"));
      if (kind == "continuous") {
        c.kind = ColumnKind::kContinuous;
      } else if (kind == "discrete") {
        c.kind = ColumnKind::kDiscrete;
      } else {
        throw ConfigError("schema: unknown column kind '" + kind + "' for " + c.name);
      }
      c.categories = f.value("categories", std::vector<std::string>{});
      s.features.push_back(std::move(c));
    }
    if (s.features.empty()) throw ConfigError("schema: no feature columns declared");
    const auto& sens = j.at("sensitive");
    s.sensitive.column = sens.at("column").get<std::string>();
    s.sensitive.groups = sens.value("groups", std::vector<std::string>{});
    if (sens.contains("outside")) {
      auto b = sens.at("outside").get<std::vector<double>>();
      if (b.size() != 2 || !(b[0] <= b[1])) throw ConfigError("schema: sensitive.outside must be [lo, hi]");
      s.sensitive.outside = std::make_pair(b[0], b[1]);
    }
    if (s.sensitive.groups.size() < 2 && !s.sensitive.outside)
      throw ConfigError("schema: sensitive needs 'groups' (>= 2 values) or 'outside'");
    const auto& lab = j.at("label");
    s.label.column = lab.at("column").get<std::string>();
    s.label.positive = lab.value("positive", std::vector<std::string>{});
    if (lab.contains("greater_than")) s.label.greater_than = lab.at("greater_than").get<double>();
    if (lab.contains("less_equal")) s.label.less_equal = lab.at("less_equal").get<double>();
    const int rules = (!s.label.positive.empty()) + s.label.greater_than.has_value() + s.label.less_equal.has_value();
    if (rules != 1) throw ConfigError("schema: label needs exactly one of positive/greater_than/less_equal");
    for (const auto& f : j.value("filters", nlohmann::json::array())) {
      FilterSpec fs;
      fs.column = f.at("column").get<std::string>();
      if (f.contains("min")) fs.min = f.at("min").get<double>();
      if (f.contains("max")) fs.max = f.at("max").get<double>();
      fs.exclude = f.value("exclude", std::vector<std::string>{});
      s.filters.push_back(std::move(fs));
    }
    s.protected_group = j.value("protected_group", 1);
    if (j.contains("missing_tokens")) s.missing_tokens = j.at("missing_tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string trim(std::string_view v) {
  std::size_t b = 0, e = v.size();
  while (b < e && (v[b] == ' ' || v[b] == '\t' || v[b] == '\r')) ++b;
  while (e > b && (v[e - 1] == ' ' || v[e - 1] == '\t' || v[e - 1] == '\r')) --e;
  return std::string(v.substr(b, e - b));
}

/// Splits one record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_record(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses a CSV stream according to `schema`. Rows with a missing value in
/// any used column are dropped and counted; rows failing a filter or whose
/// sensitive value is not a declared group are dropped and counted separately.
inline Dataset parse_csv(std::istream& in, const SchemaSpec& schema_in, bool continuous_only = false,
                         const std::string& provenance = "csv") {
  SchemaSpec schema = schema_in;
  if (continuous_only) {
    std::erase_if(schema.features, [](const ColumnSpec& c) { return c.kind == ColumnKind::kDiscrete; });
    if (schema.features.empty()) throw ConfigError("continuous-only: schema has no continuous features");
  }

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header = schema.columns;
  if (schema.header) {
    do {
      if (!std::getline(in, line)) throw DataError("csv: empty input");
      ++line_no;
    } while (detail::trim(line).empty());
    header = detail::split_record(line, schema.delimiter);
  }
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < header.size(); ++i) col_of.emplace(header[i], i);  // first duplicate wins
  auto find = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw DataError("csv: missing column '" + name + "'");
    return it->second;
  };

  std::vector<std::size_t> feat_col;
  for (const auto& f : schema.features) feat_col.push_back(find(f.name));
  const std::size_t sens_col = find(schema.sensitive.column);
  const std::size_t label_col = find(schema.label.column);
  std::vector<std::size_t> filter_col;
  for (const auto& f : schema.filters) filter_col.push_back(find(f.column));

  auto is_missing = [&](const std::string& v) {
    return std::find(schema.missing_tokens.begin(), schema.missing_tokens.end(), v) != schema.missing_tokens.end();
  };
  auto number_at = [&](const std::string& v, std::size_t ln, const std::string& col) {
    auto n = detail::parse_number(v);
    if (!n) throw DataError("csv: unparseable value '" + v + "' in column '" + col + "' at line " + std::to_string(ln));
    return *n;
  };

  Dataset ds;
  ds.schema = schema.features;
  ds.provenance = provenance;
  ds.protected_group = schema.protected_group;
  std::vector<double> values;
  std::vector<double> labels;
  const std::size_t d = schema.features.size();

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_record(line, schema.delimiter);
    if (cells.size() < header.size()) {
      throw DataError("csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    bool missing = is_missing(cells[sens_col]) || is_missing(cells[label_col]);
    for (std::size_t c : feat_col) missing = missing || is_missing(cells[c]);
    for (std::size_t c : filter_col) missing = missing || is_missing(cells[c]);
    if (missing) {
      ++ds.dropped_missing;
      continue;
    }

    bool keep = true;
    for (std::size_t k = 0; k < schema.filters.size() && keep; ++k) {
      const auto& f = schema.filters[k];
      const std::string& v = cells[filter_col[k]];
      if (std::find(f.exclude.begin(), f.exclude.end(), v) != f.exclude.end()) keep = false;
      if (keep && (f.min || f.max)) {
        const double x = number_at(v, line_no, f.column);
        if ((f.min && x < *f.min) || (f.max && x > *f.max)) keep = false;
      }
    }

    int group = -1;
    if (keep) {
      const std::string& sv = cells[sens_col];
      if (schema.sensitive.outside) {
        const double a = number_at(sv, line_no, schema.sensitive.column);
        group = (a < schema.sensitive.outside->first || a > schema.sensitive.outside->second) ? 1 : 0;
      } else {
        auto it = std::find(schema.sensitive.groups.begin(), schema.sensitive.groups.end(), sv);
        if (it == schema.sensitive.groups.end()) {
          keep = false;
        } else {
          group = static_cast<int>(it - schema.sensitive.groups.begin());
        }
      }
    }
    if (!keep) {
      ++ds.dropped_filtered;
      continue;
    }

    const std::string& lv = cells[label_col];
    double label = 0.0;
    if (!schema.label.positive.empty()) {
      label = std::find(schema.label.positive.begin(), schema.label.positive.end(), lv) != schema.label.positive.end();
    } else if (schema.label.greater_than) {
      label = number_at(lv, line_no, schema.label.column) > *schema.label.greater_than;
    } else {
      label = number_at(lv, line_no, schema.label.column) <= *schema.label.less_equal;
    }

    for (std::size_t k = 0; k < d; ++k) {
      const auto& spec = schema.features[k];
      const std::string& v = cells[feat_col[k]];
      if (!spec.categories.empty()) {
        auto it = std::find(spec.categories.begin(), spec.categories.end(), v);
        if (it == spec.categories.end())
          throw DataError("csv: unknown category '" + v + "' in column '" + spec.name + "' at line " +
                          std::to_string(line_no));
        values.push_back(static_cast<double>(it - spec.categories.begin()));
      } else {
        values.push_back(number_at(v, line_no, spec.name));
      }
    }
    ds.s.push_back(group);
    labels.push_back(label);
  }

  const auto n = static_cast<Index>(ds.s.size());
  ds.x = Eigen::Map<Tensor>(values.data(), n, static_cast<Index>(d));
  ds.y = Eigen::Map<Eigen::VectorXd>(labels.data(), n);
  const int declared = schema.sensitive.outside ? 2 : static_cast<int>(schema.sensitive.groups.size());
  std::vector<std::size_t> counts(static_cast<std::size_t>(declared), 0);
  for (int g : ds.s) ++counts[static_cast<std::size_t>(g)];
  for (int g = 0; g < declared; ++g)
    if (counts[static_cast<std::size_t>(g)] == 0)
      throw DataError("csv: group " + std::to_string(g) + " is empty after filtering");
  ds.validate();
  return ds;
}

inline Dataset load_csv(const std::string& path, const SchemaSpec& schema, bool continuous_only = false) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, schema, continuous_only, path);
}

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct OuterFold {
  FoldSplit split;
  std::vector<FoldSplit> inner;  // row indices into the full dataset
};

struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<OuterFold> outer;
};

namespace detail {

/// Assigns each of `rows` to one of k folds, stratified by (group, label).
/// Rows of each cell are shuffled and dealt round-robin with a counter that
/// carries across cells, so every cell is within one row of proportional and
/// fold sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> stratified_deal(const Dataset& ds, const std::vector<std::size_t>& rows,
                                                             int k, Rng& rng) {
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t r : rows) cells[{ds.s[r], static_cast<int>(std::lround(ds.y(static_cast<Index>(r))))}].push_back(r);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t counter = 0;
  for (auto& [key, members] : cells) {
    rng.shuffle(members);
    for (std::size_t r : members) folds[counter++ % static_cast<std::size_t>(k)].push_back(r);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline std::vector<FoldSplit> splits_from(const std::vector<std::vector<std::size_t>>& folds) {
  std::vector<FoldSplit> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldSplit s;
    s.test = folds[f];
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) s.train.insert(s.train.end(), folds[g].begin(), folds[g].end());
    std::sort(s.train.begin(), s.train.end());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline FoldPlan make_folds(const Dataset& ds, std::uint64_t seed, int outer = 3, int inner = 3) {
  if (outer < 2 || inner < 2) throw ConfigError("fold counts must be at least 2");
  if (ds.size() < static_cast<std::size_t>(outer * inner)) throw DataError("too few rows for the fold plan");
  FoldPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto outer_splits = detail::splits_from(detail::stratified_deal(ds, all, outer, rng));
  for (std::size_t f = 0; f < outer_splits.size(); ++f) {
    OuterFold of;
    of.split = std::move(outer_splits[f]);
    Rng inner_rng(derive_seed(seed, f));
    of.inner = detail::splits_from(detail::stratified_deal(ds, of.split.train, inner, inner_rng));
    plan.outer.push_back(std::move(of));
  }
  return plan;
}

inline nlohmann::json to_json(const FoldPlan& plan) {
  nlohmann::json j;
  j["seed"] = plan.seed;
  j["outer"] = nlohmann::json::array();
  for (const auto& of : plan.outer) {
    nlohmann::json o;
    o["train"] = of.split.train;
    o["test"] = of.split.test;
    o["inner"] = nlohmann::json::array();
    for (const auto& in : of.inner) o["inner"].push_back({{"train", in.train}, {"test", in.test}});
    j["outer"].push_back(std::move(o));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Toy data

struct ToyConfig {
  std::size_t n_per_group = 500;
  std::array<double, 2> mean0 = {0.0, 0.0};
  std::array<double, 2> std0 = {1.0, 1.0};
  std::array<double, 2> mean1 = {5.0, 5.0};
  std::array<double, 2> std1 = {0.5, 0.5};
  double label_noise = 0.1;
  std::uint64_t seed = 0;
};

/// Two 2-D Gaussian clouds; group = cloud. Label is 1 iff x1 + x2 exceeds the
/// group's median of x1 + x2 plus N(0, label_noise) noise.
inline Dataset gen_toy(const ToyConfig& cfg) {
  if (cfg.n_per_group == 0) throw ConfigError("toy: n_per_group must be positive");
  for (double s : {cfg.std0[0], cfg.std0[1], cfg.std1[0], cfg.std1[1]})
    if (!(s > 0.0)) throw ConfigError("toy: standard deviations must be positive");
  Rng rng(cfg.seed);
  const std::size_t n = cfg.n_per_group;
  Dataset ds;
  ds.x.resize(static_cast<Index>(2 * n), 2);
  ds.y.resize(static_cast<Index>(2 * n));
  ds.schema = {{"x1", ColumnKind::kContinuous, {}}, {"x2", ColumnKind::kContinuous, {}}};
  ds.provenance = "toy";
  ds.protected_group = 1;
  for (int g = 0; g < 2; ++g) {
    const auto& mu = g == 0 ? cfg.mean0 : cfg.mean1;
    const auto& sd = g == 0 ? cfg.std0 : cfg.std1;
    std::vector<double> sums;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Index>(g * n + i);
      ds.x(r, 0) = rng.normal(mu[0], sd[0]);
      ds.x(r, 1) = rng.normal(mu[1], sd[1]);
      ds.s.push_back(g);
      sums.push_back(ds.x(r, 0) + ds.x(r, 1));
    }
    std::vector<double> sorted = sums;
    std::sort(sorted.begin(), sorted.end());
    const double median =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    for (std::size_t i = 0; i < n; ++i) {
      const double threshold = median + rng.normal(0.0, cfg.label_noise);
      ds.y(static_cast<Index>(g * n + i)) = sums[i] > threshold ? 1.0 : 0.0;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessOptions {
  bool dequantize = true;
  std::uint64_t seed = 0;
};

/// Per-column statistics fitted on training rows. Discrete columns flagged in
/// `dequantized` receive U(0,1) noise during training and +0.5 at inference.
struct PreprocessStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> dequantized;

  static constexpr double kStdFloor = 1e-8;

  Tensor apply(const Tensor& raw, Rng* noise = nullptr) const {
    require_cols(raw, static_cast<Index>(mean.size()), "preprocess");
    Tensor out = raw;
    for (Index c = 0; c < out.cols(); ++c) {
      const auto k = static_cast<std::size_t>(c);
      if (dequantized[k]) {
        for (Index r = 0; r < out.rows(); ++r) out(r, c) += noise ? noise->uniform() : 0.5;
      }
      out.col(c) = (out.col(c).array() - mean[k]) / std[k];
    }
    return out;
  }
};

inline nlohmann::json to_json(const PreprocessStats& st) {
  return {{"mean", st.mean}, {"std", st.std}, {"dequantized", st.dequantized}};
}

inline PreprocessStats preprocess_stats_from_json(const nlohmann::json& j) {
  PreprocessStats st;
  st.mean = j.at("mean").get<std::vector<double>>();
  st.std = j.at("std").get<std::vector<double>>();
  st.dequantized = j.at("dequantized").get<std::vector<bool>>();
  if (st.mean.size() != st.std.size() || st.mean.size() != st.dequantized.size())
    throw ConfigError("preprocess stats: inconsistent column counts");
  return st;
}

struct PreprocessResult {
  Dataset train;
  Dataset test;
  PreprocessStats stats;
};

/// Fits statistics on `split.train` rows only and applies them to both sides.
inline PreprocessResult preprocess(const Dataset& ds, const FoldSplit& split, const PreprocessOptions& opt = {}) {
  if (split.train.empty()) throw DataError("preprocess: empty training split");
  PreprocessResult res;
  res.train = ds.subset(split.train);
  res.test = ds.subset(split.test);
  const Index d = ds.dim();
  PreprocessStats& st = res.stats;
  st.dequantized.resize(static_cast<std::size_t>(d));
  for (Index c = 0; c < d; ++c)
    st.dequantized[static_cast<std::size_t>(c)] =
        opt.dequantize && ds.schema[static_cast<std::size_t>(c)].kind == ColumnKind::kDiscrete;

  Rng noise(opt.seed);
  Tensor train_x = res.train.x;
  for (Index c = 0; c < d; ++c)
    if (st.dequantized[static_cast<std::size_t>(c)])
      for (Index r = 0; r < train_x.rows(); ++r) train_x(r, c) += noise.uniform();
  st.mean.resize(static_cast<std::size_t>(d));
  st.std.resize(static_cast<std::size_t>(d));
  const double n = static_cast<double>(train_x.rows());
  for (Index c = 0; c < d; ++c) {
    const double m = train_x.col(c).sum() / n;
    const double var = (train_x.col(c).array() - m).square().sum() / n;
    st.mean[static_cast<std::size_t>(c)] = m;
    st.std[static_cast<std::size_t>(c)] = std::max(std::sqrt(var), PreprocessStats::kStdFloor);
  }
  for (Index c = 0; c < d; ++c) {
    const auto k = static_cast<std::size_t>(c);
    train_x.col(c) = (train_x.col(c).array() - st.mean[k]) / st.std[k];
  }
  res.train.x = std::move(train_x);
  res.test.x = st.apply(res.test.x);
  return res;
}

}  // namespace fairflow
