#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "fairflow/autodiff.hpp"

namespace fairflow {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central differences, element by
/// element. Relative error is |analytic - numeric| / max(|analytic|, 1e-8).
inline GradCheckResult grad_check(const LossBuilder& build, std::span<Parameter* const> params, double h = 1e-5) {
  GradientSet grads;
  {
    Tape tape;
    Var loss = build(tape);
    grads = backward(tape, loss, params);
  }
  auto eval = [&] {
    Tape tape;
    return build(tape).value()(0, 0);
  };

  GradCheckResult res;
  for (Parameter* p : params) {
    const Tensor& g = grads.grad(p);
    for (Index i = 0; i < p->value.size(); ++i) {
      double& slot = p->value.data()[i];
      const double saved = slot;
      slot = saved + h;
      const double up = eval();
      slot = saved - h;
      const double down = eval();
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = g.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
      if (rel > res.max_rel_error || res.worst_index < 0) {
        res.max_rel_error = std::max(res.max_rel_error, rel);
        res.worst_param = p->name;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace fairflow
