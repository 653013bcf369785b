#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>

#include "fairflow/autodiff.hpp"
#include "fairflow/error.hpp"

namespace fairflow {

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double clip = 5.0;  // global gradient-norm cap; <= 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

/// First-order optimizer with global-norm clipping. Parameters the loss did
/// not reach are left untouched, including their moment buffers.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  }

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return steps_; }

  /// Returns the pre-clipping global gradient norm.
  double step(std::span<Parameter* const> params, const GradientSet& grads) {
    double sq = 0.0;
    for (Parameter* p : params) {
      const auto& e = grads.at(p);
      if (!e.grad.allFinite()) throw NumericError("refusing update: non-finite gradient for " + p->name);
      if (e.reached) sq += e.grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    const double factor = (cfg_.clip > 0.0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;
    ++steps_;

    for (Parameter* p : params) {
      const auto& e = grads.at(p);
      if (!e.reached) continue;
      if (cfg_.kind == OptimizerKind::kSgd) {
        p->value -= cfg_.lr * factor * e.grad;
        continue;
      }
      auto& st = state_[p];
      if (st.m.size() == 0) {
        st.m = Tensor::Zero(p->value.rows(), p->value.cols());
        st.v = Tensor::Zero(p->value.rows(), p->value.cols());
      }
      ++st.t;
      const Tensor g = factor * e.grad;
      st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * g;
      st.v = cfg_.beta2 * st.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      p->value.array() -= cfg_.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + cfg_.eps);
    }
    return norm;
  }

 private:
  struct Moments {
    Tensor m, v;
    long t = 0;
  };
  OptimizerConfig cfg_;
  long steps_ = 0;
  std::unordered_map<const Parameter*, Moments> state_;
};

}  // namespace fairflow
