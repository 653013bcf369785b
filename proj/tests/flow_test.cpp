#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "fairflow/flow.hpp"
#include "fairflow/optim.hpp"
#include "test_util.hpp"

using namespace fairflow;
using fairflow::testing::random_tensor;
using fairflow::testing::randomize;

namespace {

// Linear network (no hidden layer) computing x * w + b.
Mlp linear_net(Index in, Index out, double w, double b, const std::string& name) {
  std::vector<Parameter> ws{{name + ".w0", Tensor::Constant(in, out, w)}};
  std::vector<Parameter> bs{{name + ".b0", Tensor::Constant(1, out, b)}};
  return Mlp(std::move(ws), std::move(bs), Activation::kTanh, Activation::kLinear);
}

CouplingLayer layer_2d(double s_w, double s_b, double t_w, double cap = 1.0) {
  return CouplingLayer({1, 0}, linear_net(1, 1, s_w, s_b, "s"), linear_net(1, 1, t_w, 0.0, "t"),
                       Parameter{"cap", Tensor::Constant(1, 1, cap)});
}

FlowModel random_flow(Index dim, int layers, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  FlowConfig cfg;
  cfg.dim = dim;
  cfg.layers = layers;
  cfg.hidden = {16, 16};
  FlowModel f(cfg, rng);
  auto params = f.parameters();
  randomize(params, rng, scale);
  return f;
}

Tensor row(std::initializer_list<double> v) {
  Tensor t(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) t(0, i++) = x;
  return t;
}

// Central-difference Jacobian determinant of the 2-D forward map at x.
double fd_det(const FlowModel& f, const Tensor& x, double h = 1e-6) {
  Eigen::Matrix2d jac;
  for (Index j = 0; j < 2; ++j) {
    Tensor up = x, down = x;
    up(0, j) += h;
    down(0, j) -= h;
    Tensor d = (flow_forward(f, up).value - flow_forward(f, down).value) / (2 * h);
    jac(0, j) = d(0, 0);
    jac(1, j) = d(0, 1);
  }
  return jac.determinant();
}

}  // namespace

TEST(Coupling, ZeroNetsAreIdentity) {
  CouplingLayer l = layer_2d(0, 0, 0);
  Tensor x = row({1.5, -2.25});
  auto out = coupling_forward(l, x);
  EXPECT_EQ(out.value, x);
  EXPECT_EQ(out.logdet(0), 0.0);
}

TEST(Coupling, TranslationByPassThroughDim) {
  CouplingLayer l = layer_2d(0, 0, 1);  // s = 0, t(x1) = x1
  auto out = coupling_forward(l, row({3, 5}));
  EXPECT_EQ(out.value, row({3, 8}));
  EXPECT_EQ(out.logdet(0), 0.0);
  auto back = coupling_inverse(l, row({3, 8}));
  EXPECT_EQ(back.value, row({3, 5}));
}

TEST(Coupling, ConstantUnitScale) {
  // cap * tanh(atanh(0.5)) with cap = 2 gives s = 1.
  CouplingLayer l = layer_2d(0, std::atanh(0.5), 0, 2.0);
  auto out = coupling_forward(l, row({0, 2}));
  EXPECT_EQ(out.value(0, 0), 0.0);
  EXPECT_NEAR(out.value(0, 1), 2.0 * std::numbers::e, 1e-14);
  EXPECT_NEAR(out.logdet(0), 1.0, 1e-15);
}

TEST(Coupling, InverseLogdetCancelsForward) {
  FlowModel f = random_flow(5, 1, 21);
  Rng rng(1);
  Tensor x = random_tensor(50, 5, rng);
  auto fwd = coupling_forward(f.layers()[0], x);
  auto inv = coupling_inverse(f.layers()[0], fwd.value);
  EXPECT_LT((inv.value - x).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((fwd.logdet + inv.logdet).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Coupling, DimensionMismatchIsShapeError) {
  CouplingLayer l = layer_2d(0, 0, 0);
  EXPECT_THROW(coupling_forward(l, Tensor::Zero(1, 3)), ShapeError);
}

TEST(Coupling, OverflowNamesLayer) {
  CouplingLayer l = layer_2d(0, 10.0, 0, 800.0);  // s ~ 800 -> exp overflow
  try {
    coupling_forward(l, row({0, 1}), 3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 3"), std::string::npos) << e.what();
  }
}

TEST(Coupling, DegenerateMaskRejected) {
  EXPECT_THROW(CouplingLayer({1, 1}, linear_net(2, 1, 0, 0, "s"), linear_net(2, 1, 0, 0, "t"),
                             Parameter{"cap", Tensor::Ones(1, 1)}),
               ConfigError);
}

TEST(Flow, EmptyAndFreshFlowsAreIdentity) {
  Rng rng(2);
  Tensor x = random_tensor(10, 4, rng);
  FlowModel empty(4);
  auto out = flow_forward(empty, x);
  EXPECT_EQ(out.value, x);
  EXPECT_EQ(out.logdet, Eigen::VectorXd::Zero(10));
  EXPECT_EQ(flow_inverse(empty, x), x);

  FlowConfig cfg;
  cfg.dim = 4;
  cfg.layers = 2;
  FlowModel fresh(cfg, rng);  // zero-initialized output layers
  auto out2 = flow_forward(fresh, x);
  EXPECT_EQ(out2.value, x);
  EXPECT_EQ(out2.logdet, Eigen::VectorXd::Zero(10));
}

TEST(Flow, RejectsOneDimensionalInput) { EXPECT_THROW(FlowModel(1), ConfigError); }

TEST(Flow, OddDimensionSplit) {
  Rng rng(0);
  FlowConfig cfg;
  cfg.dim = 5;
  cfg.layers = 2;
  FlowModel f(cfg, rng);
  EXPECT_EQ(f.layers()[0].pass_dims().size(), 3u);
  EXPECT_EQ(f.layers()[0].transformed_dims().size(), 2u);
  EXPECT_EQ(f.layers()[1].pass_dims().size(), 2u);
  EXPECT_EQ(f.layers()[0].mask(), (Mask{1, 0, 1, 0, 1}));
  EXPECT_EQ(f.layers()[1].mask(), (Mask{0, 1, 0, 1, 0}));
}

TEST(Flow, RoundTripRandomFourLayer) {
  for (Index d : {2, 3, 7}) {
    FlowModel f = random_flow(d, 4, 100 + static_cast<std::uint64_t>(d));
    Rng rng(9);
    Tensor x = random_tensor(200, d, rng, 2.0);
    auto fwd = flow_forward(f, x);
    Tensor back = flow_inverse(f, fwd.value);
    EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-6) << "d=" << d;
  }
}

TEST(Flow, InverseLogdetAntisymmetry) {
  FlowModel f = random_flow(3, 4, 8);
  Rng rng(4);
  Tensor x = random_tensor(40, 3, rng);
  auto fwd = flow_forward(f, x);
  Tape tape;
  auto inv = f.inverse(tape, tape.constant(fwd.value));
  EXPECT_LT((fwd.logdet + inv.logdet.value().col(0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Flow, LogdetMatchesFiniteDifferenceJacobian) {
  FlowModel f = random_flow(2, 4, 31);
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    Tensor x = random_tensor(1, 2, rng);
    const double analytic = std::exp(flow_forward(f, x).logdet(0));
    const double numeric = std::abs(fd_det(f, x));
    EXPECT_LT(std::abs(analytic - numeric) / analytic, 1e-4);
  }
}

TEST(LogProb, IdentityAtOrigin) {
  FlowModel f(2);
  EXPECT_NEAR(log_prob(f, row({0, 0}))(0), -std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(log_prob(f, row({1, 0}))(0), -std::log(2 * std::numbers::pi) - 0.5, 1e-15);
  EXPECT_NEAR(log_prob(f, row({0, 0}))(0), -1.837877, 1e-6);
}

TEST(LogProb, TwoLayerComposition) {
  FlowModel f = random_flow(3, 2, 12);
  Rng rng(13);
  Tensor x = random_tensor(20, 3, rng);
  auto a = coupling_forward(f.layers()[0], x);
  auto b = coupling_forward(f.layers()[1], a.value);
  const double c = -1.5 * std::log(2 * std::numbers::pi);
  Eigen::VectorXd manual = (-0.5 * b.value.rowwise().squaredNorm()).array() + c;
  manual += a.logdet + b.logdet;
  EXPECT_LT((log_prob(f, x) - manual).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogProb, NonFiniteInputRejected) {
  FlowModel f(2);
  EXPECT_THROW(log_prob(f, row({std::nan(""), 0})), NumericError);
}

// Trains a small flow on a skewed 2-D sample and integrates its density.
TEST(LogProb, TrainedDensityIntegratesToOne) {
  Rng rng(17);
  Tensor data(600, 2);
  for (Index i = 0; i < data.rows(); ++i) {
    const double a = rng.normal();
    data(i, 0) = a;
    data(i, 1) = 0.5 * a * a - 0.5 + 0.6 * rng.normal();
  }
  FlowConfig cfg;
  cfg.dim = 2;
  cfg.layers = 4;
  cfg.hidden = {16, 16};
  FlowModel f(cfg, rng);
  auto params = f.parameters();
  Optimizer opt({OptimizerKind::kAdam, 5e-3, 5.0});
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    Var loss = f.nll(tape, tape.constant(data));
    opt.step(params, backward(tape, loss, params));
  }
  const double h = 0.05;
  const int n = static_cast<int>(std::lround(12.0 / h));
  Tensor grid(static_cast<Index>(n) * n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      grid(i * n + j, 0) = -6.0 + (i + 0.5) * h;
      grid(i * n + j, 1) = -6.0 + (j + 0.5) * h;
    }
  const double mass = log_prob(f, grid).array().exp().sum() * h * h;
  EXPECT_GT(mass, 0.95);
  EXPECT_LT(mass, 1.05);
}
