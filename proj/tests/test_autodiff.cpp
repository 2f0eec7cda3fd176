#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dns/autodiff.hpp"
#include "dns/errors.hpp"
#include "dns/gradcheck.hpp"
#include "oracles.hpp"

using namespace dns;
using namespace dns::ad;
using dns::testing::add_gru;
using dns::testing::add_random;
using dns::testing::project;
using dns::testing::random_matrix;

namespace {

constexpr double kTol = 1e-4;
constexpr double kFloor = 1e-6;

GradCheckReport check(ParameterStore& store, const dns::testing::GraphBuilder& build, std::uint64_t seed = 1) {
  return dns::testing::check_graph(store, build, seed, kFloor);
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(DenseForward, IdentityWeightsPassInputThrough) {
  const Vec x{{0.3, -1.2, 4.0}};
  EXPECT_TRUE(dense_forward(x, Mat::Identity(3, 3), Vec::Zero(3), Activation::Identity) == x);
}

TEST(DenseForward, ZeroWeightsGiveTheBias) {
  const Vec b{{1.0, -2.0}};
  EXPECT_TRUE(dense_forward(Vec::Random(4), Mat::Zero(2, 4), b, Activation::Identity) == b);
}

TEST(DenseForward, Activations) {
  const Vec x{{-1.0, 0.5}};
  const Mat I = Mat::Identity(2, 2);
  const Vec t = dense_forward(x, I, Vec::Zero(2), Activation::Tanh);
  EXPECT_DOUBLE_EQ(t(0), std::tanh(-1.0));
  const Vec r = dense_forward(x, I, Vec::Zero(2), Activation::Relu);
  EXPECT_EQ(r(0), 0.0);
  EXPECT_EQ(r(1), 0.5);
}

TEST(Softplus, StableAtExtremes) {
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_GT(softplus(-800.0), -1.0);
  EXPECT_NEAR(softplus(-40.0), std::exp(-40.0), 1e-30);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
}

TEST(CausalConv, PassThroughKernelReproducesTheInput) {
  // One channel per input coordinate, only the current-time tap set.
  const int d = 2, width = 3;
  Mat K = Mat::Zero(d, width * d);
  K.block(0, (width - 1) * d, d, d) = Mat::Identity(d, d);
  const Mat seq{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}, {7.0, 8.0}};
  EXPECT_TRUE(causal_conv1d_forward(seq, K, Vec::Zero(d), width) == seq);
}

TEST(CausalConv, OutputNeverDependsOnLaterInputs) {
  Rng rng(4);
  const Mat K = random_matrix(rng, 5, 6);
  const Vec b = dns::testing::random_vector(rng, 5);
  Mat seq = random_matrix(rng, 8, 2);
  const Mat before = causal_conv1d_forward(seq, K, b, 3);
  seq.row(5) *= 100.0;
  const Mat after = causal_conv1d_forward(seq, K, b, 3);
  EXPECT_TRUE(before.topRows(5) == after.topRows(5));
  EXPECT_FALSE(before.row(5) == after.row(5));
}

TEST(CausalConv, TapeStepMatchesSequenceForm) {
  Rng rng(12);
  ParameterStore s;
  const auto K = s.add("K", random_matrix(rng, 4, 9));
  const auto b = s.add("b", random_matrix(rng, 4, 1));
  const Mat seq = random_matrix(rng, 6, 3);
  const Mat want = causal_conv1d_forward(seq, s.value(K), s.value(b), 3);
  Tape tape(s);
  std::vector<NodeId> window(3, kNoNode);
  for (Eigen::Index t = 0; t < seq.rows(); ++t) {
    std::rotate(window.begin(), window.begin() + 1, window.end());
    window.back() = tape.constant(seq.row(t).transpose());
    const Vec got = tape.value(conv_step(tape, window, K, b));
    EXPECT_LT((got - want.row(t).transpose()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(GruCell, MatchesHandWrittenEquations) {
  ParameterStore s;
  const auto g = add_gru(s, 3, 4, 100);
  Rng rng(2);
  const Vec x = dns::testing::random_vector(rng, 3);
  const Vec h = dns::testing::random_vector(rng, 4);
  const Vec got = gru_cell_forward(x, h, s, g);
  auto V = [&](ParamId p) -> const Mat& { return s.value(p); };
  Vec want(4);
  for (int i = 0; i < 4; ++i) {
    const double z = sig((V(g.Wz) * x + V(g.Uz) * h + V(g.bz))(i));
    const Vec r = ((V(g.Wr) * x + V(g.Ur) * h + V(g.br)).unaryExpr([](double v) { return sig(v); }));
    const double cand = std::tanh((V(g.Wh) * x + V(g.Uh) * r.cwiseProduct(h) + V(g.bh))(i));
    want(i) = z * h(i) + (1.0 - z) * cand;
  }
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gradients, ParamVector) {
  ParameterStore s;
  const auto v = add_random(s, "v", 4, 1, 1);
  const auto r = check(s, [&](Tape& t) { return param_vector(t, v); });
  EXPECT_LE(r.max_rel_error, kTol) << r.worst_param;
}

TEST(Gradients, DenseAllActivations) {
  for (auto act : {Activation::Identity, Activation::Tanh, Activation::Relu}) {
    ParameterStore s;
    const auto x = add_random(s, "x", 5, 1, 1, 1.0);
    const auto W = add_random(s, "W", 3, 5, 2);
    const auto b = add_random(s, "b", 3, 1, 3);
    const auto r = check(s, [&](Tape& t) { return dense(t, param_vector(t, x), W, b, act); });
    EXPECT_LE(r.max_rel_error, kTol) << static_cast<int>(act) << " " << r.worst_param;
  }
}

TEST(Gradients, ConvStepWithZeroPadding) {
  ParameterStore s;
  const auto x1 = add_random(s, "x1", 2, 1, 1, 1.0);
  const auto x2 = add_random(s, "x2", 2, 1, 2, 1.0);
  const auto K = add_random(s, "K", 4, 6, 3);
  const auto b = add_random(s, "b", 4, 1, 4);
  const auto r = check(s, [&](Tape& t) {
    const std::vector<NodeId> w{kNoNode, param_vector(t, x1), param_vector(t, x2)};
    return conv_step(t, w, K, b);
  });
  EXPECT_LE(r.max_rel_error, kTol) << r.worst_param;
}

TEST(Gradients, GruCell) {
  ParameterStore s;
  const auto g = add_gru(s, 3, 4, 10);
  const auto x = add_random(s, "x", 3, 1, 1, 1.0);
  const auto h = add_random(s, "h", 4, 1, 2, 0.8);
  const auto r = check(s, [&](Tape& t) { return gru_cell(t, param_vector(t, x), param_vector(t, h), g); });
  EXPECT_LE(r.max_rel_error, kTol) << r.worst_param;
}

TEST(Gradients, GruCellChainedWithSharedWeights) {
  ParameterStore s;
  const auto g = add_gru(s, 2, 3, 20);
  const auto x = add_random(s, "x", 2, 1, 1, 1.0);
  const auto h0 = add_random(s, "h0", 3, 1, 2);
  const auto r = check(s, [&](Tape& t) {
    const NodeId xin = param_vector(t, x);
    NodeId h = param_vector(t, h0);
    for (int k = 0; k < 4; ++k) h = gru_cell(t, xin, h, g);
    return h;
  });
  EXPECT_LE(r.max_rel_error, kTol) << r.worst_param;
}

TEST(Gradients, ConcatAddAffineSoftplus) {
  ParameterStore s;
  const auto a = add_random(s, "a", 3, 1, 1, 2.0);
  const auto b = add_random(s, "b", 2, 1, 2, 2.0);
  const auto c = add_random(s, "c", 5, 1, 3, 2.0);
  const Vec scale{{0.5, -2.0, 3.0, 1.0, 0.1}};
  const Vec shift{{1.0, 0.0, -1.0, 2.0, 0.3}};
  const auto r = check(s, [&](Tape& t) {
    const std::vector<NodeId> parts{param_vector(t, a), param_vector(t, b)};
    const NodeId cat = concat(t, parts);
    const NodeId sum = add(t, cat, param_vector(t, c));
    return softplus(t, affine(t, sum, scale, shift));
  });
  EXPECT_LE(r.max_rel_error, kTol) << r.worst_param;
}

TEST(Gradients, FanOutAccumulates) {
  ParameterStore s;
  const auto a = add_random(s, "a", 3, 1, 1, 1.0);
  const auto W = add_random(s, "W", 3, 3, 2);
  const auto b = add_random(s, "b", 3, 1, 3);
  const auto r = check(s, [&](Tape& t) {
    const NodeId x = param_vector(t, a);
    const NodeId y = dense(t, x, W, b, Activation::Tanh);
    return add(t, add(t, x, y), dense(t, y, W, b, Activation::Tanh));
  });
  EXPECT_LE(r.max_rel_error, kTol) << r.worst_param;
}

TEST(Gradients, SumScalarsAndHalfSquaredNorm) {
  ParameterStore s;
  const auto a = add_random(s, "a", 3, 2, 1, 1.0);
  const auto b = add_random(s, "b", 2, 1, 2, 1.0);
  const std::vector<ParamId> ids{a, b};
  auto loss = [&](const ParameterStore& p) {
    Tape t(p);
    const NodeId n = half_squared_norm(t, ids);
    const std::vector<NodeId> both{n, n};
    return t.value(sum_scalars(t, both, -0.75))(0);
  };
  Tape t(s);
  const NodeId n = half_squared_norm(t, ids);
  const std::vector<NodeId> both{n, n};
  const auto grads = t.backward(sum_scalars(t, both, -0.75));
  // d/dp of -1.5 * 0.5 |p|^2 = -1.5 p
  EXPECT_TRUE(grads.values[0].isApprox(-1.5 * s.value(a), 1e-15));
  EXPECT_LE(check_gradients(s, loss, grads, 1e-6, kFloor).max_rel_error, kTol);
}

TEST(Gradients, DetachCutsThePath) {
  ParameterStore s;
  const auto a = add_random(s, "a", 3, 1, 1, 1.0);
  Tape t(s);
  const NodeId x = param_vector(t, a);
  const NodeId d = detach(t, x);
  EXPECT_TRUE(t.value(d) == t.value(x));
  const auto grads = t.backward(project(t, d, Vec::Ones(3)));
  EXPECT_EQ(grads.values[0].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Tape, RejectsInputsThatAreNotYetRecorded) {
  ParameterStore s;
  Tape t(s);
  const NodeId a = t.constant(Vec::Ones(2));
  EXPECT_THROW(t.push(Vec::Ones(2), {a, a + 1}, [](Tape&, const Vec&) {}), ContractError);
}

TEST(Tape, RequiresScalarLossAndSingleSweep) {
  ParameterStore s;
  s.add("w", Mat::Ones(2, 1));
  Tape t(s);
  const NodeId v = param_vector(t, 0);
  EXPECT_THROW(t.backward(v), ContractError);
  const NodeId loss = project(t, v, Vec::Ones(2));
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), ContractError);
}

TEST(ParameterStore, RejectsDuplicateNames) {
  ParameterStore s;
  s.add("w", Mat::Zero(1, 1));
  EXPECT_THROW(s.add("w", Mat::Zero(1, 1)), ContractError);
  EXPECT_THROW(s.id("missing"), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  ParameterStore s;
  s.add("w", Mat::Constant(2, 1, 1.5));
  Gradients wrong;
  wrong.values = {Mat::Constant(2, 1, 7.0)};
  const auto r = check_gradients(
      s, [](const ParameterStore& p) { return 0.5 * p.value(0).squaredNorm(); }, wrong);
  EXPECT_GT(r.max_rel_error, 0.5);
}
