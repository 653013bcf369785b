#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "fairflow/autodiff.hpp"
#include "fairflow/flow.hpp"
#include "fairflow/grad_check.hpp"
#include "fairflow/optim.hpp"
#include "test_util.hpp"

using namespace fairflow;
using fairflow::testing::random_tensor;
using fairflow::testing::randomize;

TEST(Backward, SumOfSquares) {
  Parameter x{"x", Tensor(1, 3)};
  x.value << 1, 2, 3;
  Tape tape;
  Var loss = ops::sum(ops::square(tape.param(x)));
  std::vector<Parameter*> params{&x};
  auto grads = backward(tape, loss, params);
  EXPECT_EQ(grads.grad(&x)(0, 0), 2.0);
  EXPECT_EQ(grads.grad(&x)(0, 1), 4.0);
  EXPECT_EQ(grads.grad(&x)(0, 2), 6.0);
}

TEST(Backward, IdentityFlowScoreIsMinusX) {
  FlowModel identity(3);
  Parameter x{"x", Tensor(2, 3)};
  x.value << 0.5, -1.0, 2.0, 0.0, 3.0, -0.25;
  Tape tape;
  Var lp = ops::sum(identity.log_prob(tape, tape.param(x)));
  std::vector<Parameter*> params{&x};
  auto grads = backward(tape, lp, params);
  EXPECT_TRUE(grads.grad(&x).isApprox(-x.value, 1e-15));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var v = tape.constant(Tensor::Ones(2, 2));
  std::vector<Parameter*> none;
  EXPECT_THROW(backward(tape, v, none), ContractError);
}

TEST(Backward, NanNamesOffendingNode) {
  Parameter x{"x", scalar_tensor(1000.0)};
  Tape tape;
  // exp(1000) overflows; its gradient is inf.
  Var loss = ops::sum(ops::exp(tape.param(x)));
  std::vector<Parameter*> params{&x};
  try {
    backward(tape, loss, params);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("node #"), std::string::npos);
  }
}

TEST(Backward, UnreachedParameterGetsZero) {
  Parameter a{"a", scalar_tensor(2.0)};
  Parameter b{"b", Tensor::Ones(2, 2)};
  Tape tape;
  Var loss = ops::sum(ops::square(tape.param(a)));
  std::vector<Parameter*> params{&a, &b};
  auto grads = backward(tape, loss, params);
  EXPECT_TRUE(grads.reached(&a));
  EXPECT_FALSE(grads.reached(&b));
  EXPECT_EQ(grads.grad(&b), Tensor::Zero(2, 2));
}

// Every op on random operands agrees with central differences.
TEST(GradCheck, EveryOpOnRandomInstances) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Parameter a{"a", random_tensor(4, 3, rng)};
    Parameter b{"b", random_tensor(4, 3, rng)};
    Parameter w{"w", random_tensor(3, 2, rng)};
    Parameter row{"row", random_tensor(1, 3, rng)};
    std::vector<Parameter*> params{&a, &b, &w, &row};
    auto build = [&](Tape& t) {
      Var va = t.param(a), vb = t.param(b), vw = t.param(w), vr = t.param(row);
      Var h = ops::tanh(ops::add_bias(va, vr));
      Var e = ops::exp(ops::scale(vb, 0.3));
      Var m = ops::mul_row(h * e - va, vr);
      Var sel = ops::select_cols(m, {2, 0});
      Var rest = ops::select_cols(vb, {1});
      Var merged = ops::merge_cols(sel, {0, 2}, rest, {1}, 3);
      Var mm = ops::matmul(merged, vw);
      Var rows = ops::select_rows(mm, {3, 1, 1});
      Var sp = ops::softplus(rows);
      return ops::mean(ops::row_sum(ops::square(sp))) + ops::sum(ops::neg(e));
    };
    auto res = grad_check(build, params, 1e-5);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "]";
  }
}

TEST(GradCheck, QuadraticToyLoss) {
  Parameter x{"x", Tensor(1, 4)};
  x.value << 1.5, -2.0, 0.25, 3.0;
  std::vector<Parameter*> params{&x};
  auto res = grad_check([&](Tape& t) { return ops::sum(ops::square(t.param(x))); }, params, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-8);
}

TEST(GradCheck, IdentityFlowNll) {
  FlowModel identity(2);
  Rng rng(3);
  Parameter x{"x", random_tensor(5, 2, rng)};
  std::vector<Parameter*> params{&x};
  auto res = grad_check([&](Tape& t) { return identity.nll(t, t.param(x)); }, params, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(GradCheck, RandomFourLayerFlowNll) {
  Rng rng(11);
  FlowConfig cfg;
  cfg.dim = 3;
  cfg.layers = 4;
  cfg.hidden = {8, 8};
  FlowModel flow(cfg, rng);
  auto params = flow.parameters();
  randomize(params, rng, 0.5);
  Tensor x = random_tensor(6, 3, rng);
  auto res = grad_check([&](Tape& t) { return flow.nll(t, t.constant(x)); }, params, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "] analytic "
                                     << res.analytic << " numeric " << res.numeric;
}

TEST(Optimizer, ZeroGradientsLeaveParamsUnchanged) {
  Parameter p{"p", Tensor::Ones(2, 2)};
  std::vector<Parameter*> params{&p};
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    Optimizer opt({kind, 0.1, 5.0});
    GradientSet g;
    g.set(&p, {Tensor::Zero(2, 2), true});
    opt.step(params, g);
    EXPECT_EQ(p.value, Tensor::Ones(2, 2));
  }
}

TEST(Optimizer, PlainSgdStep) {
  Parameter p{"p", scalar_tensor(1.0)};
  std::vector<Parameter*> params{&p};
  Optimizer opt({OptimizerKind::kSgd, 0.1, 5.0});
  GradientSet g;
  g.set(&p, {scalar_tensor(2.0), true});
  opt.step(params, g);
  EXPECT_DOUBLE_EQ(p.value(0, 0), 0.8);
}

TEST(Optimizer, GlobalNormClipping) {
  Parameter p{"p", Tensor::Zero(1, 2)};
  std::vector<Parameter*> params{&p};
  Optimizer opt({OptimizerKind::kSgd, 1.0, 1.0});
  GradientSet g;
  Tensor grad(1, 2);
  grad << 6.0, 8.0;  // norm 10
  g.set(&p, {grad, true});
  EXPECT_DOUBLE_EQ(opt.step(params, g), 10.0);
  EXPECT_DOUBLE_EQ(p.value(0, 0), -0.6);
  EXPECT_DOUBLE_EQ(p.value(0, 1), -0.8);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  Parameter p{"p", scalar_tensor(1.0)};
  std::vector<Parameter*> params{&p};
  Optimizer opt({OptimizerKind::kAdam, 1e-3, 5.0});
  GradientSet g;
  g.set(&p, {scalar_tensor(0.37), true});
  opt.step(params, g);
  // Bias-corrected first Adam step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.value(0, 0), 1.0 - 1e-3 * 0.37 / (0.37 + 1e-8), 1e-15);
}

TEST(Optimizer, RefusesNonFiniteGradients) {
  Parameter p{"p", scalar_tensor(1.0)};
  std::vector<Parameter*> params{&p};
  Optimizer opt;
  GradientSet g;
  g.set(&p, {scalar_tensor(std::numeric_limits<double>::quiet_NaN()), true});
  EXPECT_THROW(opt.step(params, g), NumericError);
  EXPECT_EQ(p.value(0, 0), 1.0);
}

TEST(Optimizer, UnreachedParametersSkipped) {
  Parameter p{"p", scalar_tensor(1.0)};
  std::vector<Parameter*> params{&p};
  Optimizer opt;
  GradientSet g;
  g.set(&p, {scalar_tensor(0.0), false});
  opt.step(params, g);
  EXPECT_EQ(p.value(0, 0), 1.0);
}

TEST(Optimizer, RejectsNonPositiveLearningRate) {
  EXPECT_THROW(Optimizer({OptimizerKind::kSgd, 0.0, 1.0}), ConfigError);
}

TEST(Determinism, SameSeedSameParameters) {
  auto run = [] {
    Rng rng(5);
    FlowConfig cfg;
    cfg.dim = 2;
    cfg.layers = 2;
    cfg.hidden = {8};
    FlowModel flow(cfg, rng);
    auto params = flow.parameters();
    Optimizer opt;
    Tensor x = random_tensor(16, 2, rng);
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      Var loss = flow.nll(tape, tape.constant(x));
      opt.step(params, backward(tape, loss, params));
    }
    return flow;
  };
  FlowModel a = run(), b = run();
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}
