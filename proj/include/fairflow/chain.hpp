#pragma once

// Two flows sharing one latent space. f_all models every row, f_p models the
// pivot group only; x -> f_p^{-1}(f_all(x)) moves any row into the pivot
// group's feature space. A predictor head trained on the translated rows
// keeps label information in the chain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairflow/autodiff.hpp"
#include "fairflow/data.hpp"
#include "fairflow/error.hpp"
#include "fairflow/flow.hpp"
#include "fairflow/mlp.hpp"
#include "fairflow/optim.hpp"
#include "fairflow/random.hpp"

namespace fairflow {

enum class HeadKind { kClassifier, kRanker };

inline const char* to_string(HeadKind k) { return k == HeadKind::kRanker ? "ranker" : "classifier"; }

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "classifier") return HeadKind::kClassifier;
  if (s == "ranker" || s == "pairwise_ranker") return HeadKind::kRanker;
  throw ConfigError("unknown head kind '" + s + "' (expected classifier or ranker)");
}

struct HeadConfig {
  HeadKind kind = HeadKind::kClassifier;
  std::vector<Index> hidden = {32};
};

/// Maps d features to one logit (classifier) or one ranking score.
class PredictorHead {
 public:
  PredictorHead() = default;
  PredictorHead(HeadKind kind, Mlp net) : kind_(kind), net_(std::move(net)) {
    if (net_.out_dim() != 1) throw ShapeError("predictor head must produce one output");
  }
  PredictorHead(const HeadConfig& cfg, Index dim, Rng& rng, const std::string& name = "head") : kind_(cfg.kind) {
    MlpConfig mc;
    mc.in = dim;
    mc.out = 1;
    mc.hidden = cfg.hidden;
    net_ = Mlp(mc, rng, name);
  }

  HeadKind kind() const { return kind_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  Var forward(Tape& tape, Var x) const { return net_.forward(tape, x); }
  Eigen::VectorXd score(const Tensor& x) const { return net_.predict(x).col(0); }

 private:
  HeadKind kind_ = HeadKind::kClassifier;
  Mlp net_;
};

struct ChainConfig {
  FlowConfig flow;
  HeadConfig head;
  double gamma = 1.0;
};

class ChainModel {
 public:
  ChainModel() = default;
  ChainModel(FlowModel f_all, FlowModel f_p, int pivot, PredictorHead head, double gamma)
      : f_all_(std::move(f_all)), f_p_(std::move(f_p)), pivot_(pivot), head_(std::move(head)), gamma_(gamma) {
    if (f_all_.dim() != f_p_.dim()) throw ShapeError("chain: f_all and f_p dimensionality differ");
    if (head_.net().in_dim() != f_all_.dim()) throw ShapeError("chain: head input width differs from flows");
    if (pivot_ < 0) throw ConfigError("chain: pivot group id must be non-negative");
    set_gamma(gamma);
  }

  /// Fresh chain; both flows start as the identity.
  ChainModel(const ChainConfig& cfg, int pivot, Rng& rng)
      : ChainModel(FlowModel(cfg.flow, rng, "f_all"), FlowModel(cfg.flow, rng, "f_p"), pivot,
                   PredictorHead(cfg.head, cfg.flow.dim, rng, "head"), cfg.gamma) {}

  Index dim() const { return f_all_.dim(); }
  int pivot() const { return pivot_; }
  double gamma() const { return gamma_; }
  void set_gamma(double g) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gamma must be a finite non-negative number");
    gamma_ = g;
  }
  const FlowModel& f_all() const { return f_all_; }
  const FlowModel& f_p() const { return f_p_; }
  const PredictorHead& head() const { return head_; }
  FlowModel& f_all() { return f_all_; }
  FlowModel& f_p() { return f_p_; }
  PredictorHead& head() { return head_; }

  const std::optional<PreprocessStats>& stats() const { return stats_; }
  void set_stats(PreprocessStats st) { stats_ = std::move(st); }

  std::vector<Parameter*> f_all_parameters() { return f_all_.parameters(); }
  std::vector<Parameter*> f_p_parameters() { return f_p_.parameters(); }
  std::vector<Parameter*> head_parameters() {
    std::vector<Parameter*> out;
    head_.net().collect(out);
    return out;
  }
  std::vector<Parameter*> parameters() {
    auto out = f_all_parameters();
    auto p = f_p_parameters();
    auto h = head_parameters();
    out.insert(out.end(), p.begin(), p.end());
    out.insert(out.end(), h.begin(), h.end());
    return out;
  }

  /// f_p^{-1}(f_all(x)) on a tape.
  Var transform(Tape& tape, Var x) const {
    Var z;
    try {
      z = f_all_.forward(tape, x).value;
    } catch (const NumericError& e) {
      throw NumericError(std::string("forward f_all: ") + e.what());
    }
    try {
      return f_p_.inverse(tape, z).value;
    } catch (const NumericError& e) {
      throw NumericError(std::string("inverse f_p: ") + e.what());
    }
  }

  Tensor transform(const Tensor& x) const {
    Tape tape;
    return transform(tape, tape.constant(x)).value();
  }

  /// Head output on translated rows.
  Eigen::VectorXd score(const Tensor& x) const { return head_.score(transform(x)); }

 private:
  FlowModel f_all_, f_p_;
  int pivot_ = 0;
  PredictorHead head_;
  double gamma_ = 1.0;
  std::optional<PreprocessStats> stats_;
};

/// Largest group when `requested` < 0 (ties go to the lowest id); otherwise
/// `requested`, which must be present in `ds`.
inline int select_pivot(const Dataset& ds, int requested = -1) {
  const auto counts = ds.group_counts();
  if (requested >= 0) {
    if (static_cast<std::size_t>(requested) >= counts.size() || counts[static_cast<std::size_t>(requested)] == 0)
      throw ConfigError("pivot group " + std::to_string(requested) + " is absent from the training data");
    return requested;
  }
  if (counts.empty()) throw ConfigError("cannot select a pivot from an empty dataset");
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy with logits: softplus(z) - y z.
inline Var classification_loss(Tape& tape, Var logits, const Eigen::VectorXd& y) {
  if (logits.cols() != 1 || logits.rows() != y.size()) throw ShapeError("classification_loss: logits/labels mismatch");
  Var yz = ops::mul(logits, tape.constant(Tensor(y)));
  return ops::mean(ops::softplus(logits) - yz);
}

/// Mean logistic pair loss log(1 + exp(-(s_i - s_j))) over aligned pairs.
inline Var pairwise_rank_loss(Var scores_i, Var scores_j) {
  return ops::mean(ops::softplus(ops::neg(scores_i - scores_j)));
}

/// All (i, j) with y_i > y_j.
inline std::pair<std::vector<Index>, std::vector<Index>> ordered_pairs(const Eigen::VectorXd& y) {
  std::pair<std::vector<Index>, std::vector<Index>> out;
  for (Index i = 0; i < y.size(); ++i)
    for (Index j = 0; j < y.size(); ++j)
      if (y(i) > y(j)) {
        out.first.push_back(i);
        out.second.push_back(j);
      }
  return out;
}

/// Head loss for the head's kind. A ranker batch without any ordered pair
/// yields a constant zero.
inline Var head_loss(Tape& tape, HeadKind kind, Var scores, const Eigen::VectorXd& y) {
  if (kind == HeadKind::kClassifier) return classification_loss(tape, scores, y);
  auto [hi, lo] = ordered_pairs(y);
  if (hi.empty()) return tape.constant(scalar_tensor(0.0));
  return pairwise_rank_loss(ops::select_rows(scores, std::move(hi)), ops::select_rows(scores, std::move(lo)));
}

struct LossTerms {
  Var total;
  Var l_fp;
  Var l_fall;
  Var l_y;
};

/// L = gamma * (L_fp + L_fall) + label_weight * L_y.
///
/// All three terms are recorded on the tape, but a term whose weight is zero
/// is not connected to `total`, so it contributes no gradient at all.
inline LossTerms combined_loss(Tape& tape, const ChainModel& chain, const Tensor& batch_all,
                               const Tensor& batch_pivot, const Eigen::VectorXd& labels, double label_weight = 1.0) {
  if (batch_pivot.rows() == 0) throw DataError("batch construction: pivot sub-batch is empty");
  if (batch_all.rows() == 0) throw DataError("batch construction: batch is empty");
  if (labels.size() != batch_all.rows()) throw ShapeError("combined_loss: label count differs from batch rows");
  require_cols(batch_all, chain.dim(), "combined_loss batch");
  require_cols(batch_pivot, chain.dim(), "combined_loss pivot batch");

  LossTerms t;
  Var x = tape.constant(batch_all);
  t.l_fall = chain.f_all().nll(tape, x);
  t.l_fp = chain.f_p().nll(tape, tape.constant(batch_pivot));
  Var translated = chain.transform(tape, x);
  t.l_y = head_loss(tape, chain.head().kind(), chain.head().forward(tape, translated), labels);

  const double g = chain.gamma();
  std::optional<Var> total;
  if (label_weight != 0.0) total = label_weight == 1.0 ? t.l_y : ops::scale(t.l_y, label_weight);
  if (g != 0.0) {
    Var nll = ops::scale(t.l_fp + t.l_fall, g);
    total = total ? *total + nll : nll;
  }
  t.total = total ? *total : tape.constant(scalar_tensor(0.0));
  return t;
}

struct StepStats {
  double loss = 0.0;
  double l_fp = 0.0;
  double l_fall = 0.0;
  double l_y = 0.0;
  double grad_norm = 0.0;
};

/// One optimizer step on the combined loss. f_all sees gamma * dL_fall + dL_y,
/// f_p sees gamma * dL_fp + dL_y, the head sees dL_y only.
inline StepStats train_step(ChainModel& chain, Optimizer& opt, const Tensor& batch_all, const Tensor& batch_pivot,
                            const Eigen::VectorXd& labels, double label_weight = 1.0) {
  Tape tape;
  LossTerms terms = combined_loss(tape, chain, batch_all, batch_pivot, labels, label_weight);
  auto params = chain.parameters();
  StepStats st;
  st.loss = terms.total.value()(0, 0);
  st.l_fp = terms.l_fp.value()(0, 0);
  st.l_fall = terms.l_fall.value()(0, 0);
  st.l_y = terms.l_y.value()(0, 0);
  GradientSet grads = backward(tape, terms.total, params);
  st.grad_norm = opt.step(params, grads);
  return st;
}

struct FitConfig {
  int epochs = 20;
  std::size_t batch = 128;
  std::size_t pivot_batch = 0;  // 0: same as batch
  OptimizerConfig optimizer;
  double label_weight = 1.0;
  std::uint64_t seed = 0;
};

struct FitTrace {
  std::vector<double> loss, l_fp, l_fall, l_y;
};

/// Mini-batch training. Every batch of rows is paired with a pivot-only
/// sub-batch drawn from a reshuffled cycle over the pivot rows.
inline FitTrace fit(ChainModel& chain, const Dataset& train, const FitConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (train.size() == 0) throw DataError("fit: empty training set");
  require_cols(train.x, chain.dim(), "fit training data");
  std::vector<std::size_t> pivot_rows = train.rows_of_group(chain.pivot());
  if (pivot_rows.empty())
    throw ConfigError("pivot group " + std::to_string(chain.pivot()) + " is absent from the training split");

  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer);
  const std::size_t pb = cfg.pivot_batch == 0 ? cfg.batch : cfg.pivot_batch;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t pivot_cursor = pivot_rows.size();

  FitTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum_l = 0, sum_fp = 0, sum_fall = 0, sum_y = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<Index> prow;
      prow.reserve(pb);
      while (prow.size() < pb) {
        if (pivot_cursor == pivot_rows.size()) {
          rng.shuffle(pivot_rows);
          pivot_cursor = 0;
        }
        prow.push_back(static_cast<Index>(pivot_rows[pivot_cursor++]));
      }
      Eigen::VectorXd labels(static_cast<Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) labels(static_cast<Index>(i)) = train.y(rows[i]);
      StepStats st = train_step(chain, opt, gather_rows(train.x, rows), gather_rows(train.x, prow), labels,
                                cfg.label_weight);
      sum_l += st.loss;
      sum_fp += st.l_fp;
      sum_fall += st.l_fall;
      sum_y += st.l_y;
      ++steps;
    }
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    trace.loss.push_back(sum_l / n);
    trace.l_fp.push_back(sum_fp / n);
    trace.l_fall.push_back(sum_fall / n);
    trace.l_y.push_back(sum_y / n);
  }
  return trace;
}

}  // namespace fairflow
