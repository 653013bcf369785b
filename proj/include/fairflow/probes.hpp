#pragma once

// Post-hoc classifiers that try to recover the sensitive attribute from a
// representation. The positive class is membership in the protected group.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fairflow/autodiff.hpp"
#include "fairflow/chain.hpp"
#include "fairflow/data.hpp"
#include "fairflow/error.hpp"
#include "fairflow/metrics.hpp"
#include "fairflow/mlp.hpp"
#include "fairflow/optim.hpp"
#include "fairflow/random.hpp"

namespace fairflow {

enum class ProbeKind { kLinear, kMlp, kTreeEnsemble };

inline const char* to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::kLinear: return "linear";
    case ProbeKind::kMlp: return "mlp";
    case ProbeKind::kTreeEnsemble: return "tree_ensemble";
  }
  return "?";
}

inline ProbeKind parse_probe_kind(const std::string& s) {
  if (s == "linear") return ProbeKind::kLinear;
  if (s == "mlp") return ProbeKind::kMlp;
  if (s == "tree_ensemble") return ProbeKind::kTreeEnsemble;
  throw ConfigError("unknown probe kind '" + s + "' (expected linear, mlp or tree_ensemble)");
}

struct ProbeSpec {
  ProbeKind kind = ProbeKind::kLinear;
  std::uint64_t seed = 0;
  int steps = 500;  // full-batch optimizer steps for gradient-trained probes
  double lr = 0.05;
  Index hidden = 32;
  int trees = 50;
  int depth = 4;
};

/// Degenerate probe input such as a single-class training set.
class ProbeError : public Error {
 public:
  explicit ProbeError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// A fitted probe returning P(protected | features).
class Probe {
 public:
  virtual ~Probe() = default;
  virtual Eigen::VectorXd predict_proba(const Tensor& x) const = 0;
};

namespace detail {

struct Standardizer {
  Eigen::RowVectorXd mean, scale;

  explicit Standardizer(const Tensor& x) {
    const double n = static_cast<double>(x.rows());
    mean = x.colwise().sum() / n;
    scale.resize(x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - mean(c)).square().sum() / n;
      scale(c) = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor out = x;
    out.rowwise() -= mean;
    out.array().rowwise() *= scale.array();
    return out;
  }
};

class NetProbe : public Probe {
 public:
  NetProbe(const ProbeSpec& spec, const Tensor& x, const Eigen::VectorXd& t) : standardize_(x) {
    Rng rng(spec.seed);
    MlpConfig mc;
    mc.in = x.cols();
    mc.out = 1;
    if (spec.kind == ProbeKind::kMlp) {
      mc.hidden = {spec.hidden};
    } else {
      mc.hidden = {};
      mc.zero_output_layer = true;
    }
    net_ = Mlp(mc, rng, std::string("probe.") + to_string(spec.kind));
    OptimizerConfig oc;
    oc.lr = spec.lr;
    Optimizer opt(oc);
    const Tensor xs = standardize_(x);
    std::vector<Parameter*> params;
    net_.collect(params);
    for (int step = 0; step < spec.steps; ++step) {
      Tape tape;
      Var loss = classification_loss(tape, net_.forward(tape, tape.constant(xs)), t);
      opt.step(params, backward(tape, loss, params));
    }
  }

  Eigen::VectorXd predict_proba(const Tensor& x) const override {
    Eigen::VectorXd z = net_.predict(standardize_(x)).col(0);
    return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }

 private:
  Standardizer standardize_;
  Mlp net_;
};

/// Depth-limited CART tree on Gini impurity; leaves store the positive rate.
class GiniTree {
 public:
  GiniTree(const Tensor& x, const Eigen::VectorXd& t, const std::vector<std::size_t>& rows, int depth,
           std::size_t features_per_split, Rng& rng) {
    build(x, t, rows, depth, features_per_split, rng);
  }

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    std::size_t n = 0;
    while (nodes_[n].feature >= 0) n = row(nodes_[n].feature) <= nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
    return nodes_[n].value;
  }

 private:
  struct Node {
    Index feature = -1;
    double threshold = 0.0;
    std::size_t left = 0, right = 0;
    double value = 0.0;
  };

  std::size_t build(const Tensor& x, const Eigen::VectorXd& t, const std::vector<std::size_t>& rows, int depth,
                    std::size_t mtry, Rng& rng) {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    double pos = 0;
    for (std::size_t r : rows) pos += t(static_cast<Index>(r));
    const double n = static_cast<double>(rows.size());
    nodes_[id].value = pos / n;
    if (depth == 0 || pos == 0 || pos == n) return id;

    std::vector<Index> features(static_cast<std::size_t>(x.cols()));
    for (Index c = 0; c < x.cols(); ++c) features[static_cast<std::size_t>(c)] = c;
    rng.shuffle(features);
    features.resize(std::min(mtry, features.size()));

    // Weighted child impurity n_l * gini_l + n_r * gini_r, minimized.
    const double parent = n * 2 * (pos / n) * (1 - pos / n);
    double best = parent;
    Index best_f = -1;
    double best_thr = 0;
    std::vector<std::pair<double, double>> vals(rows.size());
    for (Index f : features) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        vals[i] = {x(static_cast<Index>(rows[i]), f), t(static_cast<Index>(rows[i]))};
      std::sort(vals.begin(), vals.end());
      double lpos = 0;
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        lpos += vals[i].second;
        if (vals[i].first == vals[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl, rpos = pos - lpos;
        const double imp = 2 * lpos * (1 - lpos / nl) + 2 * rpos * (1 - rpos / nr);
        if (imp < best - 1e-12) {
          best = imp;
          best_f = f;
          best_thr = 0.5 * (vals[i].first + vals[i + 1].first);
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<std::size_t> lrows, rrows;
    for (std::size_t r : rows) (x(static_cast<Index>(r), best_f) <= best_thr ? lrows : rrows).push_back(r);
    nodes_[id].feature = best_f;
    nodes_[id].threshold = best_thr;
    const std::size_t l = build(x, t, lrows, depth - 1, mtry, rng);
    const std::size_t r = build(x, t, rrows, depth - 1, mtry, rng);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  std::vector<Node> nodes_;
};

/// Bagged Gini trees with sqrt(d) candidate features per split.
class ForestProbe : public Probe {
 public:
  ForestProbe(const ProbeSpec& spec, const Tensor& x, const Eigen::VectorXd& t) {
    if (spec.trees < 1 || spec.depth < 1) throw ConfigError("tree ensemble needs at least one tree of depth >= 1");
    Rng rng(spec.seed);
    const auto mtry = static_cast<std::size_t>(std::max(1.0, std::floor(std::sqrt(static_cast<double>(x.cols())))));
    const std::size_t n = static_cast<std::size_t>(x.rows());
    for (int k = 0; k < spec.trees; ++k) {
      std::vector<std::size_t> sample(n);
      for (auto& r : sample) r = rng.index(n);
      trees_.emplace_back(x, t, sample, spec.depth, mtry, rng);
    }
  }

  Eigen::VectorXd predict_proba(const Tensor& x) const override {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(x.rows());
    for (const auto& tree : trees_)
      for (Index r = 0; r < x.rows(); ++r) p(r) += tree.predict(x.row(r));
    return p / static_cast<double>(trees_.size());
  }

 private:
  std::vector<GiniTree> trees_;
};

}  // namespace detail

inline std::unique_ptr<Probe> fit_probe(const ProbeSpec& spec, const Tensor& x, const std::vector<int>& is_protected) {
  if (x.rows() != static_cast<Index>(is_protected.size())) throw ShapeError("probe: feature rows differ from labels");
  Eigen::VectorXd t(x.rows());
  for (Index i = 0; i < x.rows(); ++i) t(i) = is_protected[static_cast<std::size_t>(i)];
  const double pos = t.sum();
  if (pos == 0 || pos == static_cast<double>(t.size()))
    throw ProbeError("probe training set contains a single sensitive class");
  if (spec.kind == ProbeKind::kTreeEnsemble) return std::make_unique<detail::ForestProbe>(spec, x, t);
  return std::make_unique<detail::NetProbe>(spec, x, t);
}

struct ProbeScores {
  double adrg = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double accuracy = 0.0;
};

inline std::vector<int> protected_indicator(const std::vector<int>& s, int protected_group) {
  std::vector<int> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] == protected_group ? 1 : 0;
  return out;
}

/// Fits on the training pair and scores on the test pair. Predictions
/// threshold the probability at 0.5.
inline ProbeScores run_probe(const ProbeSpec& spec, const Tensor& x_train, const std::vector<int>& s_train,
                             const Tensor& x_test, const std::vector<int>& s_test, int protected_group) {
  auto train_t = protected_indicator(s_train, protected_group);
  auto test_t = protected_indicator(s_test, protected_group);
  auto probe = fit_probe(spec, x_train, train_t);
  Eigen::VectorXd p = probe->predict_proba(x_test);
  std::vector<int> pred(static_cast<std::size_t>(p.size()));
  std::size_t correct = 0;
  for (Index i = 0; i < p.size(); ++i) {
    pred[static_cast<std::size_t>(i)] = p(i) >= 0.5 ? 1 : 0;
    correct += pred[static_cast<std::size_t>(i)] == test_t[static_cast<std::size_t>(i)];
  }
  std::vector<double> scores(p.data(), p.data() + p.size());
  ProbeScores out;
  out.adrg = adrg(pred, test_t);
  out.f1 = f1_score(pred, test_t);
  out.auc = auc(scores, test_t);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test_t.size());
  return out;
}

// ---------------------------------------------------------------------------
// Battery over folds

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over folds
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

inline std::string format_mean_std(const MeanStd& ms, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << ms.mean << " ± " << ms.std;
  return os.str();
}

/// Per-fold features for one representation.
struct ProbeFold {
  Tensor x_train, x_test;
  std::vector<int> s_train, s_test;
};

struct ProbeRow {
  ProbeKind kind;
  std::vector<ProbeScores> raw, transformed;  // one entry per fold
};

struct ProbeTable {
  std::vector<ProbeRow> rows;
  std::size_t folds = 0;
};

/// Standardized inputs and chain outputs for one outer fold. Discrete columns
/// use the inference offset, so both representations are deterministic.
inline std::pair<ProbeFold, ProbeFold> probe_fold_data(const ChainModel& chain, const Dataset& ds,
                                                       const FoldSplit& split) {
  if (!chain.stats()) throw ContractError("probe: chain carries no preprocessing statistics");
  const Dataset train = ds.subset(split.train);
  const Dataset test = ds.subset(split.test);
  ProbeFold raw{chain.stats()->apply(train.x), chain.stats()->apply(test.x), train.s, test.s};
  ProbeFold hat{chain.transform(raw.x_train), chain.transform(raw.x_test), train.s, test.s};
  return {std::move(raw), std::move(hat)};
}

/// Trains every probe kind on x and x-hat for each fold. `chains[f]` is the
/// chain trained on `plan.outer[f]`.
inline ProbeTable probe_battery(const std::vector<ChainModel>& chains, const Dataset& ds, const FoldPlan& plan,
                                const std::vector<ProbeSpec>& specs) {
  if (chains.size() != plan.outer.size()) throw ContractError("probe battery: one chain per outer fold required");
  ProbeTable table;
  table.folds = plan.outer.size();
  for (const auto& spec : specs) table.rows.push_back({spec.kind, {}, {}});
  for (std::size_t f = 0; f < plan.outer.size(); ++f) {
    auto [raw, hat] = probe_fold_data(chains[f], ds, plan.outer[f].split);
    for (std::size_t k = 0; k < specs.size(); ++k) {
      ProbeSpec spec = specs[k];
      spec.seed = derive_seed(specs[k].seed, f);
      table.rows[k].raw.push_back(run_probe(spec, raw.x_train, raw.s_train, raw.x_test, raw.s_test, ds.protected_group));
      table.rows[k].transformed.push_back(
          run_probe(spec, hat.x_train, hat.s_train, hat.x_test, hat.s_test, ds.protected_group));
    }
  }
  return table;
}

/// Rows probe x metric, columns x and x_hat as "mean ± std".
inline std::string probe_table_csv(const ProbeTable& table) {
  std::ostringstream os;
  os << "probe,metric,x,x_hat\n";
  auto column = [](const std::vector<ProbeScores>& v, double ProbeScores::*m) {
    std::vector<double> out;
    for (const auto& s : v) out.push_back(s.*m);
    return format_mean_std(mean_std(out));
  };
  const std::pair<const char*, double ProbeScores::*> metrics[] = {
      {"ADRG", &ProbeScores::adrg}, {"F1", &ProbeScores::f1}, {"AUC", &ProbeScores::auc}};
  for (const auto& row : table.rows)
    for (const auto& [name, m] : metrics)
      os << to_string(row.kind) << ',' << name << ',' << column(row.raw, m) << ',' << column(row.transformed, m)
         << '\n';
  return os.str();
}

}  // namespace fairflow
