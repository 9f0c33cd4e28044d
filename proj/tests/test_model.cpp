#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "arscr/model.hpp"
#include "arscr/optim.hpp"
#include "support/temp_dir.hpp"

using namespace arscr;
using arscr::testing::TempDir;

namespace {

using Mat = std::vector<std::vector<double>>;  // [time][channel]

ModelConfig small_config() {
  ModelConfig c;
  c.mel_bins = 6;
  c.conv1_channels = 5;
  c.conv1_kernel = 3;
  c.conv2_channels = 4;
  c.conv2_kernel = 3;
  c.hidden = 3;
  c.attention_dim = 4;
  c.num_classes = 3;
  c.input_shift = 0.5;
  c.input_scale = 0.8;
  return c;
}

const Tensor& P(const AcousticModel& m, const std::string& n) { return m.params.get(n).tensor; }

Mat conv_tanh(const Mat& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  const std::size_t K = w.dim(0), Cin = w.dim(1), Cout = w.dim(2);
  Mat y;
  for (std::size_t t = 0; t + K <= x.size(); t += stride) {
    std::vector<double> row(Cout);
    for (std::size_t o = 0; o < Cout; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < Cin; ++i) s += x[t + k][i] * w[(k * Cin + i) * Cout + o];
      row[o] = std::tanh(s);
    }
    y.push_back(row);
  }
  return y;
}

Mat gru_direction(const AcousticModel& m, const std::string& p, const Mat& x, bool forward) {
  const Tensor &wi = P(m, p + "w_ih"), &wh = P(m, p + "w_hh"), &bi = P(m, p + "b_ih"), &bh = P(m, p + "b_hh");
  const std::size_t H = wh.dim(0), I = wi.dim(0), T = x.size();
  Mat out(T, std::vector<double>(H));
  std::vector<double> h(H, 0.0);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = forward ? k : T - 1 - k;
    std::vector<double> gi(3 * H), gh(3 * H);
    for (std::size_t j = 0; j < 3 * H; ++j) {
      gi[j] = bi[j];
      gh[j] = bh[j];
      for (std::size_t i = 0; i < I; ++i) gi[j] += x[t][i] * wi[i * 3 * H + j];
      for (std::size_t i = 0; i < H; ++i) gh[j] += h[i] * wh[i * 3 * H + j];
    }
    std::vector<double> next(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double r = 1 / (1 + std::exp(-(gi[j] + gh[j])));
      const double z = 1 / (1 + std::exp(-(gi[H + j] + gh[H + j])));
      const double n = std::tanh(gi[2 * H + j] + r * gh[2 * H + j]);
      next[j] = (1 - z) * n + z * h[j];
    }
    h = next;
    out[t] = h;
  }
  return out;
}

Mat bigru(const AcousticModel& m, const std::string& layer, const Mat& x) {
  Mat f = gru_direction(m, layer + ".fwd.", x, true), b = gru_direction(m, layer + ".bwd.", x, false);
  for (std::size_t t = 0; t < f.size(); ++t) f[t].insert(f[t].end(), b[t].begin(), b[t].end());
  return f;
}

// Plain-loop forward pass: returns logits and attention weights.
std::pair<std::vector<double>, std::vector<double>> reference_forward(const AcousticModel& m, const Tensor& mel) {
  const auto& c = m.config;
  Mat x(mel.dim(0), std::vector<double>(c.mel_bins));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t f = 0; f < c.mel_bins; ++f) x[t][f] = (mel.at(t, f) + c.input_shift) * c.input_scale;
  x = conv_tanh(x, P(m, "conv1.weight"), P(m, "conv1.bias"), c.conv_stride);
  x = conv_tanh(x, P(m, "conv2.weight"), P(m, "conv2.bias"), c.conv_stride);
  x = bigru(m, "gru2", bigru(m, "gru1", x));
  const Tensor &wa = P(m, "attention.weight"), &ba = P(m, "attention.bias"), &q = P(m, "attention.query");
  const std::size_t D = 2 * c.hidden, A = c.attention_dim;
  std::vector<double> scores;
  for (const auto& h : x) {
    double s = 0;
    for (std::size_t a = 0; a < A; ++a) {
      double u = ba[a];
      for (std::size_t d = 0; d < D; ++d) u += h[d] * wa[d * A + a];
      s += std::tanh(u) * q[a];
    }
    scores.push_back(s);
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  for (auto& s : scores) z += (s = std::exp(s - mx));
  for (auto& s : scores) s /= z;
  std::vector<double> e(D, 0.0);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t d = 0; d < D; ++d) e[d] += scores[t] * x[t][d];
  const Tensor &wo = P(m, "head.weight"), &bo = P(m, "head.bias");
  std::vector<double> logits(c.num_classes);
  for (std::size_t k = 0; k < c.num_classes; ++k) {
    logits[k] = bo[k];
    for (std::size_t d = 0; d < D; ++d) logits[k] += e[d] * wo[d * c.num_classes + k];
  }
  return {logits, scores};
}

Tensor random_mel(std::size_t frames, std::size_t bins, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor t({frames, bins});
  for (auto& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

TEST(ModelParams, DefaultCountIsNearTwoHundredThousand) {
  AcousticModel m = init_model(ModelConfig{}, 0);
  const std::size_t n = m.params.count();
  std::printf("default acoustic model parameter count: %zu\n", n);
  EXPECT_EQ(n, 200103u);
  EXPECT_GE(n, 190380u);
  EXPECT_LE(n, 210420u);
}

TEST(ModelParams, CountIsSumOfTensorSizes) {
  AcousticModel m = init_model(small_config(), 1);
  std::size_t total = 0;
  for (const auto& [name, shape] : model_layout(small_config())) {
    std::size_t s = 1;
    for (auto d : shape) s *= d;
    EXPECT_EQ(m.params.get(name).tensor.shape(), shape) << name;
    total += s;
  }
  EXPECT_EQ(m.params.count(), total);
  EXPECT_EQ(m.params.num_tensors(), model_layout(small_config()).size());
}

TEST(ModelParams, SameSeedBitIdenticalOtherSeedDiffers) {
  EXPECT_TRUE(init_model(small_config(), 7).params.identical(init_model(small_config(), 7).params));
  EXPECT_FALSE(init_model(small_config(), 7).params.identical(init_model(small_config(), 8).params));
}

TEST(ModelParams, InitWithinFanInBounds) {
  AcousticModel m = init_model(ModelConfig{}, 3);
  const double conv1 = 1 / std::sqrt(5.0 * 40.0);
  for (float v : P(m, "conv1.weight").data()) EXPECT_LE(std::abs(v), conv1);
  const double gru = 1 / std::sqrt(64.0);
  for (float v : P(m, "gru2.bwd.w_hh").data()) EXPECT_LE(std::abs(v), gru);
}

TEST(ModelConfigTest, Validation) {
  ModelConfig c;
  c.num_classes = 1;
  EXPECT_THROW(init_model(c, 0), Error);
  c = ModelConfig{};
  c.hidden = 0;
  EXPECT_THROW(init_model(c, 0), Error);
}

TEST(ForwardAm, MatchesPlainLoopReference) {
  AcousticModel m = init_model(small_config(), 4);
  Tensor mel = random_mel(17, 6, 5);
  Graph g;
  AmOutput out = forward_am(g, m.config, m.params, g.constant(mel));
  auto [logits, attention] = reference_forward(m, mel);
  const Tensor& got = g.value(out.logits);
  ASSERT_EQ(got.shape(), (Shape{1, 3}));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got[k], logits[k], 1e-5);
  const Tensor& att = g.value(out.attention);
  ASSERT_EQ(att.size(), attention.size());
  for (std::size_t t = 0; t < attention.size(); ++t) EXPECT_NEAR(att[t], attention[t], 1e-5);
}

TEST(ForwardAm, ShapesAndAttentionNormalization) {
  AcousticModel m = init_model(ModelConfig{}, 0);
  Tensor mel = random_mel(98, 40, 1);
  Graph g;
  AmOutput out = forward_am(g, m.config, m.params, g.constant(mel.reshaped({1, 98, 40})));
  EXPECT_EQ(g.shape(out.logits), (Shape{1, 35}));
  EXPECT_EQ(g.shape(out.embedding), (Shape{1, 128}));
  double sum = 0;
  for (float a : g.value(out.attention).data()) {
    EXPECT_GT(a, 0.0f);
    sum += a;
  }
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_TRUE(g.value(out.logits).all_finite());
  Graph g2;
  const Tensor& p = g2.value(g2.softmax(g2.constant(g.value(out.logits))));
  double ps = 0;
  for (float v : p.data()) ps += v;
  EXPECT_NEAR(ps, 1.0, 1e-6);
}

TEST(ForwardAm, DeterministicAndInputSensitive) {
  AcousticModel m = init_model(small_config(), 2);
  auto logits = [&](const Tensor& mel) {
    Graph g;
    return g.value(forward_am(g, m.config, m.params, g.constant(mel)).logits);
  };
  Tensor a = random_mel(20, 6, 1), b = random_mel(20, 6, 2);
  EXPECT_TRUE(logits(a).identical(logits(a)));
  EXPECT_FALSE(logits(a).identical(logits(b)));
}

TEST(ForwardAm, BatchRowsMatchSingles) {
  AcousticModel m = init_model(small_config(), 2);
  Tensor a = random_mel(20, 6, 1), b = random_mel(20, 6, 2);
  Tensor batch({2, 20, 6});
  std::copy(a.data().begin(), a.data().end(), batch.ptr());
  std::copy(b.data().begin(), b.data().end(), batch.ptr() + a.size());
  Graph g;
  const Tensor& both = g.value(forward_am(g, m.config, m.params, g.constant(batch)).logits);
  Graph ga, gb;
  const Tensor& la = ga.value(forward_am(ga, m.config, m.params, ga.constant(a)).logits);
  const Tensor& lb = gb.value(forward_am(gb, m.config, m.params, gb.constant(b)).logits);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(both[k], la[k], 1e-6);
    EXPECT_NEAR(both[3 + k], lb[k], 1e-6);
  }
}

TEST(ForwardAm, ShapeErrors) {
  AcousticModel m = init_model(small_config(), 2);
  Graph g;
  EXPECT_THROW(forward_am(g, m.config, m.params, g.constant(Tensor({20, 7}))), ShapeError);
  EXPECT_THROW(forward_am(g, m.config, m.params, g.constant(Tensor({m.config.min_frames() - 1, 6}))), ShapeError);
  EXPECT_NO_THROW(forward_am(g, m.config, m.params, g.constant(Tensor({m.config.min_frames(), 6}))));
}

TEST(ForwardAm, GradCheckOnSixteenFrames) {
  AcousticModel m = init_model(small_config(), 9);
  BasicParamStore<double> params = m.params.cast<double>();
  TensorD mel = random_mel(16, 6, 3).cast<double>();
  auto r = grad_check<double>(
      [&](GraphD& g) {
        AmOutput o = forward_am(g, m.config, params, g.constant(mel));
        return g.cross_entropy(o.logits, {1});
      },
      params, 1e-5, 10, 42);
  EXPECT_EQ(r.entries_checked, 10u);
  EXPECT_LT(r.max_rel_error, 1e-2) << r.worst_entry;
}

TEST(ForwardAm, GradientReachesMelInput) {
  AcousticModel m = init_model(small_config(), 9);
  m.params.set_trainable(false);
  ParamStore input;
  auto& mel = input.add("mel", random_mel(16, 6, 3));
  Graph g;
  auto grads = g.backward(g.cross_entropy(forward_am(g, m.config, m.params, g.parameter(mel)).logits, {0}));
  ASSERT_EQ(grads.size(), 1u);
  double norm = 0;
  for (float v : grads.at("mel").data()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(ReplaceHead, KeepsBackboneAndResizesHead) {
  AcousticModel m = init_model(ModelConfig{}, 0);
  const Tensor conv = P(m, "conv1.weight");
  replace_head(m, 3, 11);
  EXPECT_EQ(P(m, "head.weight").shape(), (Shape{128, 3}));
  EXPECT_EQ(P(m, "head.bias").shape(), (Shape{3}));
  EXPECT_TRUE(P(m, "conv1.weight").identical(conv));
  EXPECT_EQ(m.config.num_classes, 3u);
}

namespace {

std::uint32_t crc32_reference(const std::vector<std::uint8_t>& bytes, std::size_t n) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= bytes[i];
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

CheckpointError::Kind checkpoint_error(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected CheckpointError";
  return CheckpointError::Kind::Io;
}

std::vector<std::uint8_t> with_crc(std::vector<std::uint8_t> b) {
  const std::uint32_t c = crc32_reference(b, b.size());
  for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(c >> (8 * i)));
  return b;
}

}  // namespace

TEST(Checkpoint, ExactByteLayout) {
  ParamStore s;
  s.add("ab", Tensor(Shape{2}, std::vector<float>{1.0f, -2.0f}));
  auto bytes = serialize_checkpoint(s);
  std::vector<std::uint8_t> want = {'A', 'R', 'S', 'C', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0,
                                    0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(bytes, with_crc(want));
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir dir;
  AcousticModel m = init_model(ModelConfig{}, 5);
  save_checkpoint(m.params, dir / "m.arsc");
  EXPECT_TRUE(load_checkpoint(dir / "m.arsc").identical(m.params));
  AcousticModel back = load_model(dir / "m.arsc", ModelConfig{});
  EXPECT_TRUE(back.params.identical(m.params));
  AcousticModel inferred = load_model(dir / "m.arsc");
  EXPECT_EQ(inferred.config, ModelConfig{});
}

TEST(Checkpoint, DistinctErrors) {
  ParamStore s;
  s.add("w", Tensor(Shape{1}, std::vector<float>{3.0f}));
  auto good = serialize_checkpoint(s);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(checkpoint_error(bad_magic), CheckpointError::Kind::BadMagic);
  try {
    deserialize_checkpoint(bad_magic);
  } catch (const CheckpointError& e) {
    EXPECT_EQ(std::string(e.what()), "bad magic");
  }

  auto version = std::vector<std::uint8_t>(good.begin(), good.end() - 4);
  version[4] = 2;
  EXPECT_EQ(checkpoint_error(with_crc(version)), CheckpointError::Kind::VersionMismatch);

  auto truncated = std::vector<std::uint8_t>(good.begin(), good.end() - 6);
  EXPECT_EQ(checkpoint_error(truncated), CheckpointError::Kind::Truncated);

  auto flipped = good;
  flipped[flipped.size() - 5] ^= 0x01;
  EXPECT_EQ(checkpoint_error(flipped), CheckpointError::Kind::ChecksumMismatch);
}

TEST(Checkpoint, MissingAndUnknownTensorsAgainstConfig) {
  TempDir dir;
  AcousticModel m = init_model(small_config(), 1);
  ParamStore missing = m.params;
  missing.erase("gru1.bwd.b_hh");
  save_checkpoint(missing, dir / "missing.arsc");
  try {
    load_model(dir / "missing.arsc", small_config());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::MissingTensor);
    EXPECT_NE(std::string(e.what()).find("gru1.bwd.b_hh"), std::string::npos);
  }
  ParamStore extra = m.params;
  extra.add("stray", Tensor({1}));
  save_checkpoint(extra, dir / "extra.arsc");
  try {
    load_model(dir / "extra.arsc", small_config());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::UnknownTensor);
  }
  ModelConfig other = small_config();
  other.hidden = 4;
  save_checkpoint(m.params, dir / "m.arsc");
  EXPECT_THROW(load_model(dir / "m.arsc", other), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "nope.arsc"), CheckpointError);
}
