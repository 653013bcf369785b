// Command line front end for experiments.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fairflow/experiment.hpp"

namespace fs = std::filesystem;
using namespace fairflow;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool quiet = false;
};

struct Context {
  ExperimentConfig cfg;
  fs::path run_dir;
  Logger log;
};

Context open_run(const Common& c) {
  Context ctx;
  ctx.cfg = load_experiment(c.config, c.seed);
  ctx.run_dir = fs::path(c.out) / config_hash(ctx.cfg);
  fs::create_directories(ctx.run_dir);
  write_text_file(ctx.run_dir / "config.json", ctx.cfg.source.dump(2) + "\n");
  if (!c.quiet) ctx.log = [](const std::string& m) { std::cerr << m << '\n'; };
  return ctx;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void record_timing(const fs::path& dir, const std::string& key, double secs) {
  const fs::path p = dir / "timing.json";
  nlohmann::json j = fs::exists(p) ? read_json_file(p.string()) : nlohmann::json::object();
  j[key] = secs;
  write_text_file(p, j.dump(2) + "\n");
}

SearchResult run_search(Context& ctx, const Dataset& ds, const FoldPlan& plan) {
  const auto t0 = std::chrono::steady_clock::now();
  SearchResult res = search(ctx.cfg, ds, plan, ctx.log);
  write_text_file(ctx.run_dir / "search.json", to_json(res, ctx.cfg).dump(2) + "\n");
  record_timing(ctx.run_dir, "search_seconds", seconds_since(t0));
  return res;
}

std::vector<GridPoint> selected_points(Context& ctx, const Dataset& ds, const FoldPlan& plan) {
  const fs::path p = ctx.run_dir / "search.json";
  if (fs::exists(p)) return best_points_from_json(read_json_file(p.string()));
  if (ctx.log) ctx.log("no search result in " + ctx.run_dir.string() + "; running search first");
  return run_search(ctx, ds, plan).best_points();
}

int cmd_search(const Common& c) {
  Context ctx = open_run(c);
  const Dataset ds = load_dataset(ctx.cfg);
  const FoldPlan plan = make_folds(ds, ctx.cfg.seed, ctx.cfg.outer_folds, ctx.cfg.inner_folds);
  write_text_file(ctx.run_dir / "folds.json", to_json(plan).dump() + "\n");
  SearchResult res = run_search(ctx, ds, plan);
  for (std::size_t f = 0; f < res.outer.size(); ++f) {
    const auto& p = res.outer[f].points[res.outer[f].best];
    std::cout << "fold " << f << ": gamma=" << p.point.gamma << " lr=" << p.point.lr << " epochs=" << p.point.epochs
              << " layers=" << p.point.layers << " objective=" << p.objective << '\n';
  }
  std::cout << ctx.run_dir.string() << '\n';
  return 0;
}

int cmd_evaluate(const Common& c) {
  Context ctx = open_run(c);
  const Dataset ds = load_dataset(ctx.cfg);
  const FoldPlan plan = make_folds(ds, ctx.cfg.seed, ctx.cfg.outer_folds, ctx.cfg.inner_folds);
  const auto best = selected_points(ctx, ds, plan);
  const auto t0 = std::chrono::steady_clock::now();
  EvalOutput out = evaluate(ctx.cfg, ds, plan, best, ctx.log);
  emit_report(out.report, ctx.run_dir);
  fs::create_directories(ctx.run_dir / "models");
  for (std::size_t f = 0; f < out.chains.size(); ++f)
    write_json_file((ctx.run_dir / "models" / ("fold" + std::to_string(f) + ".json")).string(), to_json(out.chains[f]));
  record_timing(ctx.run_dir, "evaluate_seconds", seconds_since(t0));
  std::cout << results_text(out.report) << ctx.run_dir.string() << '\n';
  return 0;
}

int cmd_train(const Common& c, int fold, bool all_rows) {
  Context ctx = open_run(c);
  const Dataset ds = load_dataset(ctx.cfg);
  const FoldPlan plan = make_folds(ds, ctx.cfg.seed, ctx.cfg.outer_folds, ctx.cfg.inner_folds);
  if (!all_rows && (fold < 0 || fold >= static_cast<int>(plan.outer.size())))
    throw ConfigError("--fold must be in [0, " + std::to_string(plan.outer.size() - 1) + "]");
  GridPoint point = grid_points(ctx.cfg).front();
  const fs::path sp = ctx.run_dir / "search.json";
  if (!all_rows && fs::exists(sp)) point = best_points_from_json(read_json_file(sp.string())).at(static_cast<std::size_t>(fold));
  FoldSplit split;
  if (all_rows) {
    for (std::size_t i = 0; i < ds.size(); ++i) split.train.push_back(i);
  } else {
    split = plan.outer[static_cast<std::size_t>(fold)].split;
  }
  ChainModel chain = train_chain(ctx.cfg, point, ds, split, cell_seed(ctx.cfg.seed, all_rows ? 99 : fold, -1));
  fs::create_directories(ctx.run_dir / "models");
  const fs::path out = ctx.run_dir / "models" / (all_rows ? std::string("train_all.json") : "train_fold" + std::to_string(fold) + ".json");
  write_json_file(out.string(), to_json(chain));
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_transform(const Common& c, const std::string& model, const std::string& output) {
  const ExperimentConfig cfg = load_experiment(c.config, c.seed);
  const Dataset ds = load_dataset(cfg);
  const ChainModel chain = chain_from_json(read_json_file(model));
  if (!chain.stats()) throw ConfigError(model + ": model carries no preprocessing statistics");
  if (chain.dim() != ds.dim()) throw ShapeError("model dimension does not match the dataset");
  const Tensor xhat = chain.transform(chain.stats()->apply(ds.x));
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& col : ds.schema) os << col.name << ',';
  os << "group,label\n";
  for (Index i = 0; i < xhat.rows(); ++i) {
    for (Index j = 0; j < xhat.cols(); ++j) os << xhat(i, j) << ',';
    os << ds.s[static_cast<std::size_t>(i)] << ',' << ds.y(i) << '\n';
  }
  write_text_file(output, os.str());
  std::cout << output << '\n';
  return 0;
}

int cmd_probe(const Common& c) {
  Context ctx = open_run(c);
  const Dataset ds = load_dataset(ctx.cfg);
  const FoldPlan plan = make_folds(ds, ctx.cfg.seed, ctx.cfg.outer_folds, ctx.cfg.inner_folds);
  std::vector<ChainModel> chains;
  for (std::size_t f = 0; f < plan.outer.size(); ++f) {
    const fs::path p = ctx.run_dir / "models" / ("fold" + std::to_string(f) + ".json");
    if (!fs::exists(p)) throw DataError("missing " + p.string() + "; run evaluate first");
    chains.push_back(chain_from_json(read_json_file(p.string())));
  }
  std::vector<ProbeSpec> specs = ctx.cfg.probes;
  if (specs.empty()) {
    for (ProbeKind k : {ProbeKind::kLinear, ProbeKind::kMlp, ProbeKind::kTreeEnsemble}) {
      ProbeSpec s;
      s.kind = k;
      s.seed = ctx.cfg.seed;
      specs.push_back(s);
    }
  }
  const ProbeTable table = probe_battery(chains, ds, plan, specs);
  emit_probes(table, ctx.run_dir);
  std::cout << probe_table_csv(table);
  return 0;
}

int cmd_toy(const Common& c) {
  Context ctx = open_run(c);
  if (ctx.cfg.data.kind != "toy") throw ConfigError("toy: the config's dataset kind must be 'toy'");
  const Dataset ds = load_dataset(ctx.cfg);
  const ToyOutcome t = run_toy(ctx.cfg, ds, grid_points(ctx.cfg).front());
  write_text_file(ctx.run_dir / "scatter_original.csv", scatter_csv(t.x, t.s));
  write_text_file(ctx.run_dir / "scatter_transformed.csv", scatter_csv(t.x_hat, t.s));
  write_text_file(ctx.run_dir / "scatter_original.svg", scatter_svg(t.x, t.s, "original"));
  write_text_file(ctx.run_dir / "scatter_transformed.svg", scatter_svg(t.x_hat, t.s, "transformed"));
  const nlohmann::json summary = {{"majority_rate", t.majority_rate},
                                  {"linear_probe_accuracy_x", t.raw.accuracy},
                                  {"linear_probe_accuracy_x_hat", t.transformed.accuracy},
                                  {"linear_probe_auc_x", t.raw.auc},
                                  {"linear_probe_auc_x_hat", t.transformed.auc}};
  write_text_file(ctx.run_dir / "toy.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << '\n' << ctx.run_dir.string() << '\n';
  return 0;
}

int cmd_report(const Common& c) {
  const ExperimentConfig cfg = load_experiment(c.config, c.seed);
  const fs::path dir = fs::path(c.out) / config_hash(cfg);
  const fs::path rp = dir / "report.json";
  if (!fs::exists(rp)) throw DataError("missing " + rp.string() + "; run evaluate first");
  const EvalReport r = eval_report_from_json(read_json_file(rp.string()));
  write_text_file(dir / "results.csv", results_csv(r));
  write_text_file(dir / "results.txt", results_text(r));
  std::cout << results_text(r);
  if (fs::exists(dir / "probes.csv")) std::cout << '\n' << read_text_file(dir / "probes.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair representations through chained normalizing flows"};
  app.require_subcommand(1);
  Common common;
  int fold = 0;
  bool all_rows = false;
  std::string model, output;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--out", common.out, "root directory for run outputs")->capture_default_str();
    sub->add_flag("-q,--quiet", common.quiet, "suppress progress on stderr");
  };
  auto* train = app.add_subcommand("train", "train one chain on an outer training split");
  add_common(train);
  train->add_option("--fold", fold, "outer fold index")->capture_default_str();
  train->add_flag("--all", all_rows, "train on every row instead of a fold");
  auto* transform = app.add_subcommand("transform", "write transformed features for the config's dataset");
  add_common(transform);
  transform->add_option("--model", model, "chain model file")->required()->check(CLI::ExistingFile);
  transform->add_option("-o,--output", output, "output CSV")->required();
  auto* evaluate_cmd = app.add_subcommand("evaluate", "train and score one chain per outer fold");
  add_common(evaluate_cmd);
  auto* search_cmd = app.add_subcommand("search", "grid search on the inner folds of each outer fold");
  add_common(search_cmd);
  auto* probe = app.add_subcommand("probe", "train sensitive-attribute probes on x and x_hat");
  add_common(probe);
  auto* toy = app.add_subcommand("toy", "two-cloud toy run with scatter output");
  add_common(toy);
  auto* report = app.add_subcommand("report", "re-render result tables from report.json");
  add_common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*train) return cmd_train(common, fold, all_rows);
    if (*transform) return cmd_transform(common, model, output);
    if (*evaluate_cmd) return cmd_evaluate(common);
    if (*search_cmd) return cmd_search(common);
    if (*probe) return cmd_probe(common);
    if (*toy) return cmd_toy(common);
    if (*report) return cmd_report(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfig);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
  return 1;
}
