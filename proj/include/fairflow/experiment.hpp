#pragma once

// Experiment orchestration: configuration, nested grid search, evaluation on
// the outer folds, and report files.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairflow/chain.hpp"
#include "fairflow/data.hpp"
#include "fairflow/error.hpp"
#include "fairflow/metrics.hpp"
#include "fairflow/probes.hpp"
#include "fairflow/serialize.hpp"

namespace fairflow {

inline constexpr const char* kDataDirEnv = "FAIRFLOW_DATA_DIR";

enum class Objective { kRnd, kGpa };

inline const char* to_string(Objective o) { return o == Objective::kGpa ? "gpa" : "rnd"; }

struct DatasetRef {
  std::string kind = "csv";  // csv | toy
  std::string file;          // relative to the data directory
  std::string schema;        // relative to the config file
  bool continuous_only = false;
  ToyConfig toy;
};

struct GridPoint {
  double gamma = 1.0;
  double lr = 1e-3;
  int epochs = 20;
  int layers = 4;

  bool operator==(const GridPoint&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetRef data;
  std::string data_dir;  // optional; relative to the config file
  int pivot = -1;        // -1: largest group of each training split
  std::vector<Index> flow_hidden = {32, 32};
  HeadConfig head;
  std::size_t batch = 128;
  double label_weight = 1.0;
  double clip = 5.0;
  bool dequantize = true;
  std::vector<double> gamma_grid = {1.0};
  std::vector<double> lr_grid = {1e-3};
  std::vector<int> epochs_grid = {20};
  std::vector<int> layers_grid = {4};
  std::size_t grid_sample = 0;  // 0: full grid
  Objective objective = Objective::kRnd;
  std::size_t k = 500;
  int outer_folds = 3;
  int inner_folds = 3;
  std::vector<ProbeSpec> probes;
  std::uint64_t seed = 0;

  std::filesystem::path base_dir;  // directory of the config file
  nlohmann::json source;           // config as parsed, with the seed override applied
};

namespace detail {

template <class T>
std::vector<T> grid_values(const nlohmann::json& j, const char* key, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_array()) {
    auto out = v.get<std::vector<T>>();
    if (out.empty()) throw ConfigError(std::string("grid '") + key + "' is empty");
    return out;
  }
  return {v.get<T>()};
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

/// Parses and validates an experiment document. `seed_override` replaces the
/// config's seed when set.
inline ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                         std::optional<std::uint64_t> seed_override = std::nullopt) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    detail::reject_unknown(j,
                           {"name", "dataset", "data_dir", "pivot", "flow", "head", "training", "grid", "objective",
                            "k", "folds", "probes", "seed", "dequantize"},
                           "config");
    if (!j.contains("seed") && !seed_override) throw ConfigError("config: 'seed' is required");
    c.seed = seed_override ? *seed_override : j.at("seed").get<std::uint64_t>();
    c.name = j.value("name", c.name);
    c.data_dir = j.value("data_dir", std::string());
    c.dequantize = j.value("dequantize", true);

    const auto& d = j.at("dataset");
    detail::reject_unknown(d, {"kind", "file", "schema", "continuous_only", "toy"}, "dataset");
    c.data.kind = d.value("kind", std::string("csv"));
    if (c.data.kind == "csv") {
      c.data.file = d.at("file").get<std::string>();
      c.data.schema = d.at("schema").get<std::string>();
      c.data.continuous_only = d.value("continuous_only", false);
    } else if (c.data.kind == "toy") {
      const auto t = d.value("toy", nlohmann::json::object());
      detail::reject_unknown(t, {"n_per_group", "mean0", "std0", "mean1", "std1", "label_noise", "seed"}, "toy");
      c.data.toy.n_per_group = t.value("n_per_group", c.data.toy.n_per_group);
      c.data.toy.mean0 = t.value("mean0", c.data.toy.mean0);
      c.data.toy.std0 = t.value("std0", c.data.toy.std0);
      c.data.toy.mean1 = t.value("mean1", c.data.toy.mean1);
      c.data.toy.std1 = t.value("std1", c.data.toy.std1);
      c.data.toy.label_noise = t.value("label_noise", c.data.toy.label_noise);
      c.data.toy.seed = t.value("seed", c.seed);
    } else {
      throw ConfigError("dataset kind must be 'csv' or 'toy', got '" + c.data.kind + "'");
    }

    if (j.contains("pivot")) {
      const auto& p = j.at("pivot");
      if (p.is_string()) {
        if (p.get<std::string>() != "largest") throw ConfigError("pivot must be 'largest' or a group id");
      } else {
        c.pivot = p.get<int>();
        if (c.pivot < 0) throw ConfigError("pivot group id must be non-negative");
      }
    }

    const auto flow = j.value("flow", nlohmann::json::object());
    detail::reject_unknown(flow, {"layers", "hidden"}, "flow");
    c.flow_hidden = flow.value("hidden", c.flow_hidden);
    const auto head = j.value("head", nlohmann::json::object());
    detail::reject_unknown(head, {"kind", "hidden"}, "head");
    c.head.kind = parse_head_kind(head.value("kind", std::string("classifier")));
    c.head.hidden = head.value("hidden", c.head.hidden);

    const auto tr = j.value("training", nlohmann::json::object());
    detail::reject_unknown(tr, {"batch", "label_weight", "clip", "epochs", "lr", "gamma"}, "training");
    c.batch = tr.value("batch", c.batch);
    c.label_weight = tr.value("label_weight", c.label_weight);
    c.clip = tr.value("clip", c.clip);

    // Grid axes default to the single values given under "training"/"flow".
    const auto grid = j.value("grid", nlohmann::json::object());
    detail::reject_unknown(grid, {"gamma", "lr", "epochs", "layers", "sample"}, "grid");
    c.gamma_grid = detail::grid_values<double>(grid, "gamma", detail::grid_values<double>(tr, "gamma", c.gamma_grid));
    c.lr_grid = detail::grid_values<double>(grid, "lr", detail::grid_values<double>(tr, "lr", c.lr_grid));
    c.epochs_grid = detail::grid_values<int>(grid, "epochs", detail::grid_values<int>(tr, "epochs", c.epochs_grid));
    c.layers_grid = detail::grid_values<int>(grid, "layers", detail::grid_values<int>(flow, "layers", c.layers_grid));
    c.grid_sample = grid.value("sample", std::size_t{0});

    const std::string obj = j.value("objective", std::string("rnd"));
    if (obj == "rnd") c.objective = Objective::kRnd;
    else if (obj == "gpa") c.objective = Objective::kGpa;
    else throw ConfigError("objective must be 'rnd' or 'gpa', got '" + obj + "'");
    c.k = j.value("k", c.k);

    const auto folds = j.value("folds", nlohmann::json::object());
    detail::reject_unknown(folds, {"outer", "inner"}, "folds");
    c.outer_folds = folds.value("outer", c.outer_folds);
    c.inner_folds = folds.value("inner", c.inner_folds);

    for (const auto& p : j.value("probes", nlohmann::json::array())) {
      detail::reject_unknown(p, {"kind", "steps", "lr", "hidden", "trees", "depth"}, "probe");
      ProbeSpec spec;
      spec.kind = parse_probe_kind(p.at("kind").get<std::string>());
      spec.steps = p.value("steps", spec.steps);
      spec.lr = p.value("lr", spec.lr);
      spec.hidden = p.value("hidden", spec.hidden);
      spec.trees = p.value("trees", spec.trees);
      spec.depth = p.value("depth", spec.depth);
      spec.seed = c.seed;
      c.probes.push_back(spec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  for (double g : c.gamma_grid)
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("grid: gamma values must be finite and >= 0");
  for (double lr : c.lr_grid)
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("grid: learning rates must be finite and > 0");
  for (int e : c.epochs_grid)
    if (e < 1) throw ConfigError("grid: epochs must be >= 1");
  for (int l : c.layers_grid)
    if (l < 1) throw ConfigError("grid: layers must be >= 1");
  for (Index h : c.flow_hidden)
    if (h < 1) throw ConfigError("flow: hidden widths must be positive");
  if (c.batch == 0) throw ConfigError("training: batch must be positive");
  if (c.k == 0) throw ConfigError("k must be at least 1");
  if (c.outer_folds < 2 || c.inner_folds < 2) throw ConfigError("folds: outer and inner must be at least 2");

  c.source = j;
  c.source["seed"] = c.seed;
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path, std::optional<std::uint64_t> seed_override = {}) {
  const auto j = read_json_file(path);
  return parse_experiment(j, std::filesystem::path(path).parent_path(), seed_override);
}

/// 64-bit FNV-1a of the canonical (sorted-key) config text, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : c.source.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::filesystem::path resolve_data_dir(const ExperimentConfig& c) {
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  if (!c.data_dir.empty()) return c.base_dir / c.data_dir;
  return "data";
}

inline Dataset load_dataset(const ExperimentConfig& c) {
  Dataset ds;
  if (c.data.kind == "toy") {
    ds = gen_toy(c.data.toy);
  } else {
    const auto schema = schema_from_json(read_json_file((c.base_dir / c.data.schema).string()));
    ds = load_csv((resolve_data_dir(c) / c.data.file).string(), schema, c.data.continuous_only);
  }
  ds.validate();
  return ds;
}

/// Grid points in a fixed order (gamma slowest, layers fastest), optionally
/// subsampled without replacement.
inline std::vector<GridPoint> grid_points(const ExperimentConfig& c) {
  std::vector<GridPoint> pts;
  for (double g : c.gamma_grid)
    for (double lr : c.lr_grid)
      for (int e : c.epochs_grid)
        for (int l : c.layers_grid) pts.push_back({g, lr, e, l});
  if (pts.empty()) throw ConfigError("grid is empty");
  if (c.grid_sample > 0 && c.grid_sample < pts.size()) {
    Rng rng(derive_seed(c.seed, 0x6772696400ULL));
    std::vector<std::size_t> idx(pts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(c.grid_sample);
    std::sort(idx.begin(), idx.end());
    std::vector<GridPoint> sub;
    for (std::size_t i : idx) sub.push_back(pts[i]);
    pts = std::move(sub);
  }
  return pts;
}

inline nlohmann::json to_json(const GridPoint& p) {
  return {{"gamma", p.gamma}, {"lr", p.lr}, {"epochs", p.epochs}, {"layers", p.layers}};
}

inline GridPoint grid_point_from_json(const nlohmann::json& j) {
  return {j.at("gamma").get<double>(), j.at("lr").get<double>(), j.at("epochs").get<int>(), j.at("layers").get<int>()};
}

// ---------------------------------------------------------------------------
// Training and scoring one split

struct SplitMetrics {
  double one_minus_rnd = 0.0;
  double one_minus_gpa = 0.0;
  double ndcg = 0.0;
  bool ndcg_no_relevant = false;
};

/// Seeds for one (outer, inner) cell; inner == -1 is the outer evaluation.
inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t outer, int inner) {
  return derive_seed(seed, 1000 * (outer + 1) + static_cast<std::uint64_t>(inner + 1));
}

inline ChainModel train_chain(const ExperimentConfig& c, const GridPoint& p, const Dataset& ds, const FoldSplit& split,
                              std::uint64_t seed) {
  PreprocessOptions po;
  po.dequantize = c.dequantize;
  po.seed = derive_seed(seed, 2);
  PreprocessResult pre = preprocess(ds, {split.train, {}}, po);
  ChainConfig cc;
  cc.flow.dim = ds.dim();
  cc.flow.layers = p.layers;
  cc.flow.hidden = c.flow_hidden;
  cc.head = c.head;
  cc.gamma = p.gamma;
  Rng init(derive_seed(seed, 0));
  ChainModel chain(cc, select_pivot(pre.train, c.pivot), init);
  chain.set_stats(pre.stats);
  FitConfig fc;
  fc.epochs = p.epochs;
  fc.batch = c.batch;
  fc.optimizer.lr = p.lr;
  fc.optimizer.clip = c.clip;
  fc.label_weight = c.label_weight;
  fc.seed = derive_seed(seed, 1);
  fit(chain, pre.train, fc);
  return chain;
}

/// Ranks the rows of `rows` by the chain's score and evaluates the list.
inline SplitMetrics score_rows(const ExperimentConfig& c, const ChainModel& chain, const Dataset& ds,
                               const std::vector<std::size_t>& rows) {
  const Dataset part = ds.subset(rows);
  const Eigen::VectorXd sc = chain.score(chain.stats()->apply(part.x));
  if (!sc.allFinite()) throw NumericError("non-finite ranking scores");
  std::vector<double> scores(sc.data(), sc.data() + sc.size());
  std::vector<double> labels(part.y.data(), part.y.data() + part.y.size());
  const RankedList list = make_ranked_list(scores, labels, part.s, ds.protected_group);
  SplitMetrics m;
  m.one_minus_rnd = 1.0 - rnd(list);
  m.one_minus_gpa = 1.0 - gpa(scores, labels, part.s, 0, 1);
  const NdcgResult n = ndcg_at_k(list, c.k);
  m.ndcg = n.value;
  m.ndcg_no_relevant = n.no_relevant;
  return m;
}

// ---------------------------------------------------------------------------
// Search

using Logger = std::function<void(const std::string&)>;

struct PointResult {
  GridPoint point;
  bool failed = false;
  std::string error;
  std::vector<double> inner_objective, inner_ndcg;
  double objective = 0.0;  // mean over inner folds
  double ndcg = 0.0;
};

struct OuterSearch {
  std::vector<PointResult> points;
  std::size_t best = 0;
};

struct SearchResult {
  std::vector<OuterSearch> outer;

  std::vector<GridPoint> best_points() const {
    std::vector<GridPoint> out;
    for (const auto& o : outer) out.push_back(o.points[o.best].point);
    return out;
  }
};

/// True when `a` should be preferred over `b`: higher objective, then higher
/// NDCG, then lower gamma. Earlier grid order wins remaining ties.
inline bool better_point(const PointResult& a, const PointResult& b) {
  if (a.objective != b.objective) return a.objective > b.objective;
  if (a.ndcg != b.ndcg) return a.ndcg > b.ndcg;
  return a.point.gamma < b.point.gamma;
}

/// Selects a grid point per outer fold using only that fold's inner splits.
/// Rows of the outer test split are never read.
inline SearchResult search(const ExperimentConfig& c, const Dataset& ds, const FoldPlan& plan,
                           const Logger& log = {}) {
  const auto grid = grid_points(c);
  SearchResult res;
  for (std::size_t f = 0; f < plan.outer.size(); ++f) {
    OuterSearch os;
    for (const GridPoint& p : grid) {
      PointResult pr;
      pr.point = p;
      try {
        for (std::size_t i = 0; i < plan.outer[f].inner.size(); ++i) {
          const FoldSplit& in = plan.outer[f].inner[i];
          ChainModel chain = train_chain(c, p, ds, in, cell_seed(c.seed, f, static_cast<int>(i)));
          const SplitMetrics m = score_rows(c, chain, ds, in.test);
          pr.inner_objective.push_back(c.objective == Objective::kRnd ? m.one_minus_rnd : m.one_minus_gpa);
          pr.inner_ndcg.push_back(m.ndcg);
        }
        pr.objective = mean_std(pr.inner_objective).mean;
        pr.ndcg = mean_std(pr.inner_ndcg).mean;
      } catch (const NumericError& e) {
        pr.failed = true;
        pr.error = e.what();
      } catch (const MetricUndefined& e) {
        pr.failed = true;
        pr.error = e.what();
      }
      if (log) {
        std::ostringstream os_log;
        os_log << "search fold " << f << " gamma=" << p.gamma << " lr=" << p.lr << " epochs=" << p.epochs
               << " layers=" << p.layers << ": ";
        if (pr.failed) os_log << "failed (" << pr.error << ")";
        else os_log << "objective " << pr.objective << " ndcg " << pr.ndcg;
        log(os_log.str());
      }
      os.points.push_back(std::move(pr));
    }
    bool any = false;
    for (std::size_t i = 0; i < os.points.size(); ++i) {
      if (os.points[i].failed) continue;
      if (!any || better_point(os.points[i], os.points[os.best])) os.best = i;
      any = true;
    }
    if (!any) throw NumericError("search: every grid point failed on outer fold " + std::to_string(f));
    res.outer.push_back(std::move(os));
  }
  return res;
}

inline nlohmann::json to_json(const SearchResult& r, const ExperimentConfig& c) {
  nlohmann::json j;
  j["config_hash"] = config_hash(c);
  j["objective"] = std::string("1-") + to_string(c.objective);
  j["outer"] = nlohmann::json::array();
  for (const auto& o : r.outer) {
    nlohmann::json oj;
    oj["best"] = to_json(o.points[o.best].point);
    oj["points"] = nlohmann::json::array();
    for (const auto& p : o.points) {
      nlohmann::json pj = {{"point", to_json(p.point)}, {"failed", p.failed}};
      if (p.failed) pj["error"] = p.error;
      else pj.update({{"objective", p.objective}, {"ndcg", p.ndcg}, {"inner_objective", p.inner_objective},
                      {"inner_ndcg", p.inner_ndcg}});
      oj["points"].push_back(std::move(pj));
    }
    j["outer"].push_back(std::move(oj));
  }
  return j;
}

inline std::vector<GridPoint> best_points_from_json(const nlohmann::json& j) {
  std::vector<GridPoint> out;
  try {
    for (const auto& o : j.at("outer")) out.push_back(grid_point_from_json(o.at("best")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("search result: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct FoldEval {
  GridPoint point;
  SplitMetrics metrics;
  std::size_t test_rows = 0;
};

struct EvalReport {
  std::string name;
  std::string dataset;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t k = 500;
  std::vector<FoldEval> folds;
  MeanStd rnd, gpa, ndcg;  // of 1-rND, 1-GPA, NDCG@k
};

struct EvalOutput {
  EvalReport report;
  std::vector<ChainModel> chains;  // one per outer fold
};

/// Trains one chain per outer fold with that fold's selected point and scores
/// the outer test rows.
inline EvalOutput evaluate(const ExperimentConfig& c, const Dataset& ds, const FoldPlan& plan,
                           const std::vector<GridPoint>& best, const Logger& log = {}) {
  if (best.size() != plan.outer.size()) throw ConfigError("evaluate: need one selected grid point per outer fold");
  EvalOutput out;
  EvalReport& r = out.report;
  r.name = c.name;
  r.dataset = c.data.kind == "toy" ? "toy" : std::filesystem::path(c.data.file).stem().string();
  r.config_hash = config_hash(c);
  r.seed = c.seed;
  r.k = c.k;
  std::vector<double> a, b, n;
  for (std::size_t f = 0; f < plan.outer.size(); ++f) {
    ChainModel chain = train_chain(c, best[f], ds, plan.outer[f].split, cell_seed(c.seed, f, -1));
    FoldEval fe{best[f], score_rows(c, chain, ds, plan.outer[f].split.test), plan.outer[f].split.test.size()};
    if (log) {
      std::ostringstream os;
      os << "evaluate fold " << f << ": 1-rND " << fe.metrics.one_minus_rnd << " 1-GPA " << fe.metrics.one_minus_gpa
         << " NDCG@" << c.k << " " << fe.metrics.ndcg;
      log(os.str());
    }
    a.push_back(fe.metrics.one_minus_rnd);
    b.push_back(fe.metrics.one_minus_gpa);
    n.push_back(fe.metrics.ndcg);
    r.folds.push_back(fe);
    out.chains.push_back(std::move(chain));
  }
  r.rnd = mean_std(a);
  r.gpa = mean_std(b);
  r.ndcg = mean_std(n);
  return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["dataset"] = r.dataset;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["k"] = r.k;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds)
    j["folds"].push_back({{"point", to_json(f.point)},
                          {"test_rows", f.test_rows},
                          {"1-rND", f.metrics.one_minus_rnd},
                          {"1-GPA", f.metrics.one_minus_gpa},
                          {"ndcg", f.metrics.ndcg},
                          {"ndcg_no_relevant", f.metrics.ndcg_no_relevant}});
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  j["summary"] = {{"1-rND", ms(r.rnd)}, {"1-GPA", ms(r.gpa)}, {"ndcg", ms(r.ndcg)}};
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.name = j.at("name").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.k = j.at("k").get<std::size_t>();
    for (const auto& f : j.at("folds")) {
      FoldEval fe;
      fe.point = grid_point_from_json(f.at("point"));
      fe.test_rows = f.at("test_rows").get<std::size_t>();
      fe.metrics.one_minus_rnd = f.at("1-rND").get<double>();
      fe.metrics.one_minus_gpa = f.at("1-GPA").get<double>();
      fe.metrics.ndcg = f.at("ndcg").get<double>();
      fe.metrics.ndcg_no_relevant = f.at("ndcg_no_relevant").get<bool>();
      r.folds.push_back(fe);
    }
    auto ms = [&](const char* key) {
      const auto& m = j.at("summary").at(key);
      return MeanStd{m.at("mean").get<double>(), m.at("std").get<double>()};
    };
    r.rnd = ms("1-rND");
    r.gpa = ms("1-GPA");
    r.ndcg = ms("ndcg");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Output files

inline std::string results_csv(const EvalReport& r) {
  if (r.folds.empty()) throw ContractError("results table: report has no folds");
  std::ostringstream os;
  os << "Model,Dataset,1-rND,1-GPA,NDCG@" << r.k << '\n';
  os << "fairflow," << r.dataset << ',' << format_mean_std(r.rnd) << ',' << format_mean_std(r.gpa) << ','
     << format_mean_std(r.ndcg) << '\n';
  return os.str();
}

/// Left-aligned text table with two spaces between columns.
inline std::string aligned_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  auto display = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;  // count UTF-8 code points
    return n;
  };
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], display(row[i]));
    }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << row[i];
      if (i + 1 < row.size()) os << std::string(width[i] - display(row[i]) + 2, ' ');
    }
    os << '\n';
  }
  return os.str();
}

inline std::string results_text(const EvalReport& r) {
  if (r.folds.empty()) throw ContractError("results table: report has no folds");
  return aligned_table({{"Model", "Dataset", "1-rND", "1-GPA", "NDCG@" + std::to_string(r.k)},
                        {"fairflow", r.dataset, format_mean_std(r.rnd), format_mean_std(r.gpa), format_mean_std(r.ndcg)}});
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Scatter rows "x1,x2,group" for the first two feature columns.
inline std::string scatter_csv(const Tensor& x, const std::vector<int>& s) {
  if (x.cols() < 2) throw ShapeError("scatter: need at least two columns");
  std::ostringstream os;
  os << "x1,x2,group\n" << std::setprecision(17);
  for (Index i = 0; i < x.rows(); ++i) os << x(i, 0) << ',' << x(i, 1) << ',' << s[static_cast<std::size_t>(i)] << '\n';
  return os.str();
}

/// Minimal SVG scatter plot, one colour per group.
inline std::string scatter_svg(const Tensor& x, const std::vector<int>& s, const std::string& title) {
  if (x.rows() == 0 || x.cols() < 2) throw ShapeError("scatter: need rows and at least two columns");
  const double w = 480, h = 480, pad = 30;
  const double x0 = x.col(0).minCoeff(), x1 = x.col(0).maxCoeff();
  const double y0 = x.col(1).minCoeff(), y1 = x.col(1).maxCoeff();
  const double sx = (w - 2 * pad) / std::max(x1 - x0, 1e-12), sy = (h - 2 * pad) / std::max(y1 - y0, 1e-12);
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  for (Index i = 0; i < x.rows(); ++i) {
    const double cx = pad + (x(i, 0) - x0) * sx, cy = h - pad - (x(i, 1) - y0) * sy;
    os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"2\" fill=\""
       << colours[static_cast<std::size_t>(s[static_cast<std::size_t>(i)]) % 4] << "\" fill-opacity=\"0.6\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes report.json, results.csv and results.txt into `dir`.
inline void emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  if (r.folds.empty()) throw ContractError("emit: report has no folds");
  std::filesystem::create_directories(dir);
  write_text_file(dir / "report.json", to_json(r).dump(2) + "\n");
  write_text_file(dir / "results.csv", results_csv(r));
  write_text_file(dir / "results.txt", results_text(r));
}

inline nlohmann::json probe_metadata(const ProbeTable& t) {
  return {{"folds", t.folds}, {"fold_plan", "outer"}, {"fits_per_probe_and_representation", t.folds}};
}

inline void emit_probes(const ProbeTable& t, const std::filesystem::path& dir) {
  if (t.rows.empty()) throw ContractError("emit: probe table is empty");
  std::filesystem::create_directories(dir);
  write_text_file(dir / "probes.csv", probe_table_csv(t));
  write_text_file(dir / "probes.json", probe_metadata(t).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Toy run

struct ToyOutcome {
  Tensor x, x_hat;  // all rows, standardized and transformed
  std::vector<int> s;
  ProbeScores raw, transformed;  // linear probe, outer fold 0
  double majority_rate = 0.0;    // of the probe's test rows
};

/// Trains a chain on the first outer training split and probes both
/// representations with a linear classifier on the matching test split.
inline ToyOutcome run_toy(const ExperimentConfig& c, const Dataset& ds, const GridPoint& p) {
  const FoldPlan plan = make_folds(ds, c.seed, c.outer_folds, c.inner_folds);
  const FoldSplit& split = plan.outer[0].split;
  const std::uint64_t seed = cell_seed(c.seed, 0, -1);
  ChainModel chain = train_chain(c, p, ds, split, seed);
  ToyOutcome out;
  auto [raw, hat] = probe_fold_data(chain, ds, split);
  ProbeSpec linear;
  linear.seed = c.seed;
  out.raw = run_probe(linear, raw.x_train, raw.s_train, raw.x_test, raw.s_test, ds.protected_group);
  out.transformed = run_probe(linear, hat.x_train, hat.s_train, hat.x_test, hat.s_test, ds.protected_group);
  double ones = 0;
  for (int g : raw.s_test) ones += g == ds.protected_group;
  const double n = static_cast<double>(raw.s_test.size());
  out.majority_rate = std::max(ones, n - ones) / n;
  out.x = chain.stats()->apply(ds.x);
  out.x_hat = chain.transform(out.x);
  out.s = ds.s;
  return out;
}

}  // namespace fairflow
