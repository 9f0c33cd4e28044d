#include <gtest/gtest.h>

#include <cmath>

#include "arscr/graph.hpp"
#include "arscr/optim.hpp"
#include "support/op_cases.hpp"

using namespace arscr;
using arscr::testing::random_tensor;

namespace {

TensorD values(Shape shape, std::vector<double> v) { return TensorD(std::move(shape), std::move(v)); }

void expect_near(const TensorD& got, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "entry " << i;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Tensor, ScalarHasOneElement) {
  TensorD s = TensorD::scalar(3.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], 3.5);
}

TEST(Tensor, DataSizeMustMatchShape) {
  EXPECT_THROW(TensorD(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(TensorD(Shape{2, 3}).reshaped({4}), ShapeError);
}

TEST(Tensor, IdenticalIsBitwise) {
  TensorD a = values({2}, {0.0, 1.0});
  TensorD b = values({2}, {-0.0, 1.0});
  EXPECT_TRUE(a.identical(a));
  EXPECT_FALSE(a.identical(b));
  EXPECT_FALSE(a.identical(a.reshaped({1, 2})));
}

TEST(GraphOps, AddBroadcastsTrailingAxes) {
  GraphD g;
  NodeRef a = g.constant(values({2, 3}, {1, 2, 3, 4, 5, 6}));
  NodeRef b = g.constant(values({3}, {10, 20, 30}));
  expect_near(g.value(g.add(a, b)), {11, 22, 33, 14, 25, 36});
  NodeRef c = g.constant(values({2, 1}, {100, 200}));
  expect_near(g.value(g.add(a, c)), {101, 102, 103, 204, 205, 206});
  expect_near(g.value(g.sub(a, b)), {-9, -18, -27, -6, -15, -24});
}

TEST(GraphOps, MulAndScalar) {
  GraphD g;
  NodeRef a = g.constant(values({2, 2}, {1, 2, 3, 4}));
  expect_near(g.value(g.mul(a, g.scalar(-2))), {-2, -4, -6, -8});
  expect_near(g.value(g.mul(a, a)), {1, 4, 9, 16});
}

TEST(GraphOps, IncompatibleBroadcastThrows) {
  GraphD g;
  NodeRef a = g.constant(TensorD({2, 3}));
  NodeRef b = g.constant(TensorD({2}));
  EXPECT_THROW(g.add(a, b), ShapeError);
}

TEST(GraphOps, MatmulMatchesNaiveLoop) {
  std::mt19937_64 rng(1);
  TensorD a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng);
  GraphD g;
  const TensorD& c = g.value(g.matmul(g.constant(a), g.constant(b)));
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a[r * 4 + k] * b[k * 5 + j];
      EXPECT_NEAR(c[r * 5 + j], s, 1e-12);
    }
  }
  EXPECT_THROW(g.matmul(g.constant(a), g.constant(TensorD({3, 5}))), ShapeError);
}

TEST(GraphOps, Conv1dMatchesNaiveLoop) {
  std::mt19937_64 rng(2);
  const std::size_t B = 2, T = 9, Cin = 3, Cout = 4, K = 3, S = 2;
  TensorD x = random_tensor({B, T, Cin}, rng), w = random_tensor({K, Cin, Cout}, rng);
  GraphD g;
  const TensorD& y = g.value(g.conv1d(g.constant(x), g.constant(w), S));
  const std::size_t To = (T - K) / S + 1;
  ASSERT_EQ(y.shape(), (Shape{B, To, Cout}));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t o = 0; o < Cout; ++o) {
        double s = 0;
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t i = 0; i < Cin; ++i) s += x[(b * T + t * S + k) * Cin + i] * w[(k * Cin + i) * Cout + o];
        EXPECT_NEAR(y[(b * To + t) * Cout + o], s, 1e-12);
      }
}

TEST(GraphOps, Conv1dRejectsShortInputAndZeroStride) {
  GraphD g;
  NodeRef x = g.constant(TensorD({1, 2, 1}));
  NodeRef w = g.constant(TensorD({3, 1, 1}));
  EXPECT_THROW(g.conv1d(x, w, 1), ShapeError);
  EXPECT_THROW(g.conv1d(g.constant(TensorD({1, 4, 1})), w, 0), Error);
}

TEST(GraphOps, GruCellMatchesGateEquations) {
  std::mt19937_64 rng(3);
  const std::size_t B = 2, I = 3, H = 2;
  TensorD x = random_tensor({B, I}, rng), h = random_tensor({B, H}, rng);
  TensorD wi = random_tensor({I, 3 * H}, rng), wh = random_tensor({H, 3 * H}, rng);
  TensorD bi = random_tensor({3 * H}, rng), bh = random_tensor({3 * H}, rng);
  GraphD g;
  const TensorD& out = g.value(g.gru_cell(g.constant(x), g.constant(h), g.constant(wi), g.constant(wh),
                                          g.constant(bi), g.constant(bh)));
  ASSERT_EQ(out.shape(), (Shape{B, H}));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      auto gate = [&](std::size_t k, bool hidden_only) {
        double s = hidden_only ? 0.0 : bi[k];
        if (!hidden_only)
          for (std::size_t i = 0; i < I; ++i) s += x[b * I + i] * wi[i * 3 * H + k];
        return s;
      };
      auto hid = [&](std::size_t k) {
        double s = bh[k];
        for (std::size_t i = 0; i < H; ++i) s += h[b * H + i] * wh[i * 3 * H + k];
        return s;
      };
      const double r = sigmoid(gate(j, false) + hid(j));
      const double z = sigmoid(gate(H + j, false) + hid(H + j));
      const double n = std::tanh(gate(2 * H + j, false) + r * hid(2 * H + j));
      EXPECT_NEAR(out[b * H + j], (1 - z) * n + z * h[b * H + j], 1e-12);
    }
  }
}

TEST(GraphOps, ElementwiseFunctions) {
  GraphD g;
  NodeRef x = g.constant(values({3}, {0.25, 1.0, 4.0}));
  expect_near(g.value(g.tanh(x)), {std::tanh(0.25), std::tanh(1.0), std::tanh(4.0)});
  expect_near(g.value(g.sigmoid(x)), {sigmoid(0.25), sigmoid(1.0), sigmoid(4.0)});
  expect_near(g.value(g.exp(x)), {std::exp(0.25), std::exp(1.0), std::exp(4.0)});
  expect_near(g.value(g.log(x)), {std::log(0.25), 0.0, std::log(4.0)});
  expect_near(g.value(g.sqrt(x)), {0.5, 1.0, 2.0});
  expect_near(g.value(g.square(x)), {0.0625, 1.0, 16.0});
}

TEST(GraphOps, SoftmaxIsStableAndNormalized) {
  GraphD g;
  NodeRef x = g.constant(values({2, 3}, {1000, 1001, 1002, -5, 0, 5}));
  const TensorD& p = g.value(g.softmax(x));
  const double e0 = 1.0 / (1 + std::exp(1.0) + std::exp(2.0));
  expect_near(p, {e0, e0 * std::exp(1.0), e0 * std::exp(2.0), std::exp(-10.0) / (1 + std::exp(-5.0) + std::exp(-10.0)),
                  std::exp(-5.0) / (1 + std::exp(-5.0) + std::exp(-10.0)), 1 / (1 + std::exp(-5.0) + std::exp(-10.0))});
}

TEST(GraphOps, ReductionsAlongAxes) {
  GraphD g;
  NodeRef x = g.constant(values({2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(g.shape(g.reduce_sum(x)), Shape{});
  expect_near(g.value(g.reduce_sum(x)), {21});
  expect_near(g.value(g.reduce_sum(x, 0)), {5, 7, 9});
  expect_near(g.value(g.reduce_mean(x, 1)), {2, 5});
  expect_near(g.value(g.reduce_mean(x)), {3.5});
  EXPECT_THROW(g.reduce_sum(x, 2), ShapeError);
}

TEST(GraphOps, SliceConcatReshape) {
  GraphD g;
  NodeRef x = g.constant(values({2, 3}, {1, 2, 3, 4, 5, 6}));
  NodeRef s = g.slice(x, 1, 1, 3);
  EXPECT_EQ(g.shape(s), (Shape{2, 2}));
  expect_near(g.value(s), {2, 3, 5, 6});
  expect_near(g.value(g.concat({x, s}, 1)), {1, 2, 3, 2, 3, 4, 5, 6, 5, 6});
  expect_near(g.value(g.concat({x, x}, 0)), {1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6});
  NodeRef r = g.reshape(x, {3, -1});
  EXPECT_EQ(g.shape(r), (Shape{3, 2}));
  EXPECT_THROW(g.slice(x, 1, 2, 2), ShapeError);
  EXPECT_THROW(g.slice(x, 1, 0, 4), ShapeError);
  EXPECT_THROW(g.reshape(x, {-1, -1}), Error);
  EXPECT_THROW(g.reshape(x, {4, -1}), ShapeError);
  EXPECT_THROW(g.concat({x, g.constant(TensorD({3, 3}))}, 1), ShapeError);
}

TEST(GraphOps, CrossEntropyMatchesLogSoftmax) {
  GraphD g;
  NodeRef logits = g.constant(values({2, 3}, {1, 2, 3, 0, 0, 0}));
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  const double want = ((lse - 1.0) + std::log(3.0)) / 2.0;
  expect_near(g.value(g.cross_entropy(logits, {0, 2})), {want});
  EXPECT_THROW(g.cross_entropy(logits, {0, 3}), Error);
  EXPECT_THROW(g.cross_entropy(logits, {0}), ShapeError);
}

TEST(GraphAutodiff, SqrtDerivativeAtZeroIsZero) {
  BasicParamStore<double> store;
  auto& p = store.add("x", values({2}, {0.0, 4.0}));
  GraphD g;
  NodeRef loss = g.reduce_sum(g.sqrt(g.parameter(p)));
  auto grads = g.backward(loss);
  expect_near(grads.at("x"), {0.0, 0.25});
}

TEST(GraphAutodiff, FrozenParametersAreOmitted) {
  BasicParamStore<double> store;
  auto& a = store.add("a", values({2}, {1, 2}));
  auto& b = store.add("b", values({2}, {3, 4}), false);
  GraphD g;
  auto grads = g.backward(g.reduce_sum(g.mul(g.parameter(a), g.parameter(b))));
  EXPECT_EQ(grads.size(), 1u);
  expect_near(grads.at("a"), {3, 4});
}

TEST(GraphAutodiff, SharedNodeAccumulatesGradient) {
  BasicParamStore<double> store;
  auto& a = store.add("a", TensorD::scalar(3.0));
  GraphD g;
  NodeRef x = g.parameter(a);
  EXPECT_EQ(x, g.parameter(a));
  auto grads = g.backward(g.add(g.mul(x, x), x));
  EXPECT_NEAR(grads.at("a")[0], 7.0, 1e-12);
}

TEST(GraphAutodiff, BackwardNeedsScalarLoss) {
  BasicParamStore<double> store;
  auto& a = store.add("a", TensorD({2}, 1.0));
  GraphD g;
  EXPECT_THROW(g.backward(g.parameter(a)), Error);
}

TEST(GraphAutodiff, EvaluateRebindsInputsAndRereadsParameters) {
  BasicParamStore<double> store;
  auto& w = store.add("w", TensorD::scalar(2.0));
  GraphD g;
  NodeRef x = g.input("x", TensorD::scalar(1.0));
  NodeRef y = g.mul(x, g.parameter(w));
  EXPECT_EQ(g.value(y)[0], 2.0);
  EXPECT_EQ(g.evaluate(y, {{"x", TensorD::scalar(5.0)}})[0], 10.0);
  w.tensor[0] = 3.0;
  EXPECT_EQ(g.evaluate(y, {{"x", TensorD::scalar(5.0)}})[0], 15.0);
  EXPECT_THROW(g.evaluate(y, {{"nope", TensorD::scalar(1.0)}}), Error);
}

TEST(GraphAutodiff, UnboundInputThrows) {
  GraphD g;
  NodeRef x = g.input("x");
  NodeRef y = g.tanh(x);
  EXPECT_THROW(g.evaluate(y), Error);
}

TEST(GradCheck, EveryOpAgreesWithFiniteDifferences) {
  for (const auto& c : arscr::testing::op_cases()) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      GradCheckResult r = arscr::testing::check_case(c, 1000 + trial);
      EXPECT_LT(r.max_rel_error, 1e-3) << c.name << " trial " << trial << " worst " << r.worst_entry;
      EXPECT_GT(r.entries_checked, 0u) << c.name;
    }
  }
}
