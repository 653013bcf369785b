#pragma once

// Affine coupling flows.
//
// A coupling layer copies the pass-through dimensions (mask == 1) and maps the
// remaining ones as
//
//   y_u = x_u * exp(s(x_m)) + t(x_m),    s = cap * tanh(s_net(x_m))
//
// so log|det J| is the row sum of s. Inversion reuses s and t evaluated on the
// unchanged pass-through dimensions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fairflow/autodiff.hpp"
#include "fairflow/error.hpp"
#include "fairflow/mlp.hpp"
#include "fairflow/random.hpp"

namespace fairflow {

using Mask = std::vector<int>;

/// Alternating mask: even indices pass through when `odd` is false.
inline Mask alternating_mask(Index dim, bool odd) {
  Mask m(static_cast<std::size_t>(dim));
  for (Index i = 0; i < dim; ++i) m[static_cast<std::size_t>(i)] = ((i % 2 == 0) != odd) ? 1 : 0;
  return m;
}

class CouplingLayer {
 public:
  CouplingLayer() = default;

  CouplingLayer(Mask mask, Mlp s_net, Mlp t_net, Parameter scale_cap)
      : mask_(std::move(mask)), s_net_(std::move(s_net)), t_net_(std::move(t_net)), cap_(std::move(scale_cap)) {
    for (std::size_t i = 0; i < mask_.size(); ++i) {
      if (mask_[i] != 0 && mask_[i] != 1) throw ConfigError("coupling mask entries must be 0 or 1");
      (mask_[i] ? pass_ : trans_).push_back(static_cast<Index>(i));
    }
    if (pass_.empty() || trans_.empty()) throw ConfigError("coupling mask needs at least one 0 and one 1 entry");
    const auto np = static_cast<Index>(pass_.size()), nt = static_cast<Index>(trans_.size());
    if (s_net_.in_dim() != np || t_net_.in_dim() != np || s_net_.out_dim() != nt || t_net_.out_dim() != nt) {
      std::ostringstream os;
      os << "coupling subnetworks must map " << np << " -> " << nt << " dimensions";
      throw ShapeError(os.str());
    }
    if (cap_.value.rows() != 1 || cap_.value.cols() != nt) throw ShapeError("scale cap must be 1 x " + std::to_string(nt));
  }

  Index dim() const { return static_cast<Index>(mask_.size()); }
  const Mask& mask() const { return mask_; }
  const std::vector<Index>& pass_dims() const { return pass_; }
  const std::vector<Index>& transformed_dims() const { return trans_; }
  const Mlp& s_net() const { return s_net_; }
  const Mlp& t_net() const { return t_net_; }
  Mlp& s_net() { return s_net_; }
  Mlp& t_net() { return t_net_; }
  const Parameter& scale_cap() const { return cap_; }
  Parameter& scale_cap() { return cap_; }

  void collect(std::vector<Parameter*>& out) {
    s_net_.collect(out);
    t_net_.collect(out);
    out.push_back(&cap_);
  }

  struct Output {
    Var y;
    Var logdet;  // n x 1
  };

  Output forward(Tape& tape, Var x, int index = -1) const {
    require_cols(x.value(), dim(), "coupling forward");
    Var xm = ops::select_cols(x, pass_);
    Var xu = ops::select_cols(x, trans_);
    auto [s, t] = scale_shift(tape, xm);
    Var yu = ops::mul(xu, ops::exp(s)) + t;
    Var y = ops::merge_cols(xm, pass_, yu, trans_, dim());
    check_finite(y, index, "forward");
    return {y, ops::row_sum(s)};
  }

  Output inverse(Tape& tape, Var y, int index = -1) const {
    require_cols(y.value(), dim(), "coupling inverse");
    Var ym = ops::select_cols(y, pass_);
    Var yu = ops::select_cols(y, trans_);
    auto [s, t] = scale_shift(tape, ym);
    Var xu = ops::mul(yu - t, ops::exp(ops::neg(s)));
    Var x = ops::merge_cols(ym, pass_, xu, trans_, dim());
    check_finite(x, index, "inverse");
    return {x, ops::neg(ops::row_sum(s))};
  }

 private:
  std::pair<Var, Var> scale_shift(Tape& tape, Var masked) const {
    Var s = ops::mul_row(ops::tanh(s_net_.forward(tape, masked)), tape.param(cap_));
    Var t = t_net_.forward(tape, masked);
    return {s, t};
  }

  static void check_finite(const Var& v, int index, const char* dir) {
    if (!v.value().allFinite()) {
      std::ostringstream os;
      os << "numeric overflow in coupling layer " << index << " (" << dir << ")";
      throw NumericError(os.str());
    }
  }

  Mask mask_;
  std::vector<Index> pass_, trans_;
  Mlp s_net_, t_net_;
  Parameter cap_;
};

struct FlowConfig {
  Index dim = 2;
  int layers = 4;
  std::vector<Index> hidden = {64, 64};
  Activation hidden_activation = Activation::kTanh;
};

/// Stack of coupling layers with a standard normal base distribution.
class FlowModel {
 public:
  FlowModel() = default;

  /// Empty stack (identity map) over `dim` dimensions.
  explicit FlowModel(Index dim) : dim_(dim) {
    if (dim < 2) throw ConfigError("flow dimensionality must be at least 2");
  }

  FlowModel(const FlowConfig& cfg, Rng& rng, const std::string& name = "flow") : FlowModel(cfg.dim) {
    if (cfg.layers < 0) throw ConfigError("layer count must be non-negative");
    for (int l = 0; l < cfg.layers; ++l) {
      Mask mask = alternating_mask(cfg.dim, l % 2 == 1);
      const Index np = std::count(mask.begin(), mask.end(), 1);
      const Index nt = cfg.dim - np;
      MlpConfig mc;
      mc.in = np;
      mc.out = nt;
      mc.hidden = cfg.hidden;
      mc.hidden_activation = cfg.hidden_activation;
      mc.zero_output_layer = true;
      const std::string prefix = name + ".layer" + std::to_string(l);
      Mlp s(mc, rng, prefix + ".s");
      Mlp t(mc, rng, prefix + ".t");
      Parameter cap{prefix + ".cap", Tensor::Ones(1, nt)};
      layers_.emplace_back(std::move(mask), std::move(s), std::move(t), std::move(cap));
    }
  }

  FlowModel(Index dim, std::vector<CouplingLayer> layers) : FlowModel(dim) {
    for (const auto& l : layers)
      if (l.dim() != dim) throw ShapeError("all coupling layers must share the flow dimensionality");
    layers_ = std::move(layers);
  }

  Index dim() const { return dim_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  std::vector<CouplingLayer>& layers() { return layers_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  struct Output {
    Var value;
    Var logdet;  // n x 1
  };

  Output forward(Tape& tape, Var x) const {
    require_cols(x.value(), dim_, "flow forward");
    Var logdet = tape.constant(Tensor::Zero(x.rows(), 1));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto out = layers_[i].forward(tape, x, static_cast<int>(i));
      x = out.y;
      logdet = logdet + out.logdet;
    }
    return {x, logdet};
  }

  Output inverse(Tape& tape, Var z) const {
    require_cols(z.value(), dim_, "flow inverse");
    Var logdet = tape.constant(Tensor::Zero(z.rows(), 1));
    for (std::size_t i = layers_.size(); i-- > 0;) {
      auto out = layers_[i].inverse(tape, z, static_cast<int>(i));
      z = out.y;
      logdet = logdet + out.logdet;
    }
    return {z, logdet};
  }

  /// Per-row log density under the standard normal base, n x 1.
  static Var base_log_prob(Var z) {
    const double c = -0.5 * static_cast<double>(z.cols()) * std::log(2.0 * std::numbers::pi);
    Var quad = ops::scale(ops::row_sum(ops::square(z)), -0.5);
    Tape& t = z.tape();
    return quad + t.constant(Tensor::Constant(z.rows(), 1, c));
  }

  /// log p_X(x) = log p_Z(f(x)) + log|det df/dx|, n x 1.
  Var log_prob(Tape& tape, Var x) const {
    auto out = forward(tape, x);
    Var lp = base_log_prob(out.value) + out.logdet;
    if (!lp.value().allFinite()) throw NumericError("log_prob: non-finite log density");
    return lp;
  }

  /// Mean negative log-likelihood of a batch, 1 x 1.
  Var nll(Tape& tape, Var x) const { return ops::neg(ops::mean(log_prob(tape, x))); }

 private:
  Index dim_ = 0;
  std::vector<CouplingLayer> layers_;
};

// Value-level helpers. They run the same taped code on a scratch tape.

struct MapResult {
  Tensor value;
  Eigen::VectorXd logdet;
};

inline MapResult coupling_forward(const CouplingLayer& layer, const Tensor& x, int index = 0) {
  Tape tape;
  auto out = layer.forward(tape, tape.constant(x), index);
  return {out.y.value(), out.logdet.value().col(0)};
}

inline MapResult coupling_inverse(const CouplingLayer& layer, const Tensor& y, int index = 0) {
  Tape tape;
  auto out = layer.inverse(tape, tape.constant(y), index);
  return {out.y.value(), out.logdet.value().col(0)};
}

inline MapResult flow_forward(const FlowModel& model, const Tensor& x) {
  Tape tape;
  auto out = model.forward(tape, tape.constant(x));
  return {out.value.value(), out.logdet.value().col(0)};
}

inline Tensor flow_inverse(const FlowModel& model, const Tensor& z) {
  Tape tape;
  return model.inverse(tape, tape.constant(z)).value.value();
}

inline Eigen::VectorXd log_prob(const FlowModel& model, const Tensor& x) {
  if (!x.allFinite()) throw NumericError("log_prob: non-finite input");
  Tape tape;
  return model.log_prob(tape, tape.constant(x)).value().col(0);
}

}  // namespace fairflow
