#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fairflow/autodiff.hpp"
#include "fairflow/error.hpp"
#include "fairflow/random.hpp"

namespace fairflow {

enum class Activation { kLinear, kTanh };

inline const char* to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "linear"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + s + "'");
}

struct MlpConfig {
  Index in = 1;
  Index out = 1;
  std::vector<Index> hidden = {64, 64};
  Activation hidden_activation = Activation::kTanh;
  Activation output_activation = Activation::kLinear;
  bool zero_output_layer = false;
};

/// Fully connected network; weights are stored (fan_in x fan_out) so a batch
/// maps as X * W + b.
class Mlp {
 public:
  Mlp() = default;

  Mlp(const MlpConfig& cfg, Rng& rng, const std::string& name)
      : hidden_activation_(cfg.hidden_activation), output_activation_(cfg.output_activation) {
    if (cfg.in < 1 || cfg.out < 1) throw ConfigError("mlp " + name + ": dimensions must be positive");
    std::vector<Index> dims{cfg.in};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(cfg.out);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      if (dims[l + 1] < 1) throw ConfigError("mlp " + name + ": hidden width must be positive");
      const bool last = l + 2 == dims.size();
      Parameter w{name + ".w" + std::to_string(l), Tensor(dims[l], dims[l + 1])};
      Parameter b{name + ".b" + std::to_string(l), Tensor::Zero(1, dims[l + 1])};
      if (last && cfg.zero_output_layer) {
        w.value.setZero();
      } else {
        const double a = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        for (Index i = 0; i < w.value.size(); ++i) w.value.data()[i] = rng.uniform(-a, a);
      }
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(b));
    }
  }

  /// Builds a network from explicit layer parameters (deserialization, tests).
  Mlp(std::vector<Parameter> weights, std::vector<Parameter> biases, Activation hidden, Activation output)
      : weights_(std::move(weights)), biases_(std::move(biases)), hidden_activation_(hidden), output_activation_(output) {
    if (weights_.empty() || weights_.size() != biases_.size()) throw ConfigError("mlp: layer lists disagree");
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (biases_[l].value.rows() != 1 || biases_[l].value.cols() != weights_[l].value.cols())
        throw ShapeError("mlp: bias shape does not match weight " + weights_[l].name);
      if (l > 0 && weights_[l].value.rows() != weights_[l - 1].value.cols())
        throw ShapeError("mlp: consecutive layer dimensions disagree at " + weights_[l].name);
      if (!weights_[l].value.allFinite() || !biases_[l].value.allFinite())
        throw NumericError("mlp: non-finite parameter in " + weights_[l].name);
    }
  }

  Index in_dim() const { return weights_.front().value.rows(); }
  Index out_dim() const { return weights_.back().value.cols(); }
  std::size_t depth() const { return weights_.size(); }
  Activation hidden_activation() const { return hidden_activation_; }
  Activation output_activation() const { return output_activation_; }
  const std::vector<Parameter>& weights() const { return weights_; }
  const std::vector<Parameter>& biases() const { return biases_; }
  std::vector<Parameter>& weights() { return weights_; }
  std::vector<Parameter>& biases() { return biases_; }

  void collect(std::vector<Parameter*>& out) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
  }

  Var forward(Tape& tape, Var x) const {
    if (x.cols() != in_dim()) require_cols(x.value(), in_dim(), "mlp input");
    Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = ops::add_bias(ops::matmul(h, tape.param(weights_[l])), tape.param(biases_[l]));
      const Activation act = l + 1 == weights_.size() ? output_activation_ : hidden_activation_;
      if (act == Activation::kTanh) h = ops::tanh(h);
    }
    return h;
  }

  Tensor predict(const Tensor& x) const {
    require_cols(x, in_dim(), "mlp input");
    Tensor h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Tensor next = h * weights_[l].value;
      next.rowwise() += biases_[l].value.row(0);
      const Activation act = l + 1 == weights_.size() ? output_activation_ : hidden_activation_;
      if (act == Activation::kTanh) next = next.array().tanh().matrix();
      h = std::move(next);
    }
    return h;
  }

 private:
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
  Activation hidden_activation_ = Activation::kTanh;
  Activation output_activation_ = Activation::kLinear;
};

}  // namespace fairflow
