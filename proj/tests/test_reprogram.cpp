#include <gtest/gtest.h>

#include "arscr/reprogram.hpp"

using namespace arscr;

namespace {

ReprogramLayer full_layer(Tensor theta) {
  ReprogramLayer l;
  l.mode = ReprogramMode::Full;
  l.params.add(kThetaName, std::move(theta));
  return l;
}

ReprogramLayer pad_layer(Tensor theta, std::vector<std::uint8_t> mask) {
  ReprogramLayer l;
  l.mode = ReprogramMode::PadMask;
  l.mask = std::move(mask);
  l.params.add(kThetaName, std::move(theta));
  return l;
}

Tensor vec(std::vector<float> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

}  // namespace

TEST(ReprogramPad, HandExample) {
  auto layer = pad_layer(vec({9, 9, 5, 7}), {0, 0, 1, 1});
  Tensor out = reprogram_pad(vec({1, 2}), layer);
  EXPECT_TRUE(out.identical(vec({1, 2, 5, 7})));
}

TEST(ReprogramPad, ZeroThetaIsZeroPadding) {
  auto layer = make_pad_layer(3, 6, 0.0, 1);
  Tensor out = reprogram_pad(vec({0.5f, -0.25f, 1.0f}), layer);
  EXPECT_TRUE(out.identical(vec({0.5f, -0.25f, 1.0f, 0, 0, 0})));
}

TEST(ReprogramPad, TargetLongerThanSourceThrows) {
  auto layer = make_pad_layer(2, 4, 0.1, 1);
  try {
    reprogram_pad(vec({1, 2, 3, 4, 5}), layer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "target longer than source");
  }
  EXPECT_THROW(pad_mask(5, 4), Error);
}

TEST(ReprogramPad, MaskIsZeroExactlyOverTarget) {
  for (std::size_t src = 1; src <= 12; ++src) {
    for (std::size_t tgt = 0; tgt <= src; ++tgt) {
      auto m = pad_mask(tgt, src);
      ASSERT_EQ(m.size(), src);
      for (std::size_t i = 0; i < src; ++i) EXPECT_EQ(m[i], i < tgt ? 0 : 1);
    }
  }
}

TEST(ReprogramPad, AllOnesMaskWithoutPaddingEqualsFull) {
  std::mt19937_64 rng(3);
  Tensor theta = init_theta({8}, 0.5, rng).tensor;
  Tensor x = init_theta({8}, 1.0, rng).tensor;
  auto pad = pad_layer(theta, std::vector<std::uint8_t>(8, 1));
  auto full = full_layer(theta);
  EXPECT_TRUE(reprogram_pad(x, pad).identical(reprogram_full(x, full)));
}

TEST(ReprogramPad, GradientIsZeroWhereMaskIsZero) {
  auto layer = make_pad_layer(3, 7, 0.1, 2);
  Graph g;
  NodeRef out = apply_reprogram(g, layer, g.constant(vec({1, 2, 3})));
  auto grads = g.backward(g.reduce_sum(g.mul(out, g.constant(vec({1, 2, 3, 4, 5, 6, 7})))));
  EXPECT_TRUE(grads.at(kThetaName).identical(vec({0, 0, 0, 4, 5, 6, 7})));
}

TEST(ReprogramFull, Examples) {
  auto layer = full_layer(vec({0.05f, 0.05f}));
  Tensor out = reprogram_full(vec({0.1f, -0.2f}), layer);
  EXPECT_FLOAT_EQ(out[0], 0.15f);
  EXPECT_FLOAT_EQ(out[1], -0.15f);
}

TEST(ReprogramFull, ZeroThetaIsBitExactIdentity) {
  std::mt19937_64 rng(1);
  Tensor x = init_theta({16000}, 1.0, rng).tensor;
  auto layer = make_full_layer({16000}, ReprogramDomain::Waveform, 0.0, 0);
  EXPECT_TRUE(reprogram_full(x, layer).identical(x));
}

TEST(ReprogramFull, GradientOfSumIsOnes) {
  auto layer = make_full_layer({2, 3}, ReprogramDomain::Feature, 0.1, 1);
  Graph g;
  auto grads = g.backward(g.reduce_sum(apply_reprogram(g, layer, g.constant(Tensor({4, 2, 3}, 1.0f)))));
  for (float v : grads.at(kThetaName).data()) EXPECT_EQ(v, 4.0f);  // summed over a batch of 4
  Graph g1;
  auto single = g1.backward(g1.reduce_sum(apply_reprogram(g1, layer, g1.constant(Tensor({2, 3})))));
  for (float v : single.at(kThetaName).data()) EXPECT_EQ(v, 1.0f);
}

TEST(ReprogramFull, ShapeMismatchThrows) {
  auto layer = full_layer(vec({1, 2, 3}));
  EXPECT_THROW(reprogram_full(vec({1, 2}), layer), ShapeError);
  auto pad = make_pad_layer(2, 3, 0, 0);
  EXPECT_THROW(reprogram_full(vec({1, 2, 3}), pad), Error);
}

TEST(InitTheta, ScaleSeedAndSize) {
  std::mt19937_64 a(5), b(5);
  Parameter z = init_theta({10}, 0.0, a);
  for (float v : z.tensor.data()) EXPECT_EQ(v, 0.0f);
  std::mt19937_64 c(9), d(9);
  Parameter p = init_theta({100}, 0.01, c);
  EXPECT_TRUE(p.tensor.identical(init_theta({100}, 0.01, d).tensor));
  for (float v : p.tensor.data()) EXPECT_LE(std::abs(v), 0.01f);
  EXPECT_THROW(init_theta({1}, -1.0, a), Error);
  auto layer = make_full_layer({16000}, ReprogramDomain::Waveform, 0.0, 0);
  EXPECT_EQ(layer.num_trainable(), 16000u);
  EXPECT_EQ(layer.params.num_tensors(), 1u);
}
