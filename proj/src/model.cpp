#include "arscr/model.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include "arscr/error.hpp"

namespace arscr {

void ModelConfig::validate() const {
  if (mel_bins == 0 || conv1_channels == 0 || conv2_channels == 0 || conv1_kernel == 0 || conv2_kernel == 0 ||
      conv_stride == 0 || hidden == 0 || attention_dim == 0) {
    throw Error("model config: all sizes must be positive");
  }
  if (num_classes < 2) throw Error("model config: num_classes must be at least 2");
}

std::size_t ModelConfig::min_frames() const {
  // conv2 needs conv2_kernel inputs, each conv1 output needs conv1_kernel frames.
  const std::size_t t1 = conv2_kernel;
  return (t1 - 1) * conv_stride + conv1_kernel;
}

std::vector<std::pair<std::string, Shape>> model_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  layout.push_back({"conv1.weight", {cfg.conv1_kernel, cfg.mel_bins, cfg.conv1_channels}});
  layout.push_back({"conv1.bias", {cfg.conv1_channels}});
  layout.push_back({"conv2.weight", {cfg.conv2_kernel, cfg.conv1_channels, cfg.conv2_channels}});
  layout.push_back({"conv2.bias", {cfg.conv2_channels}});
  const std::size_t h = cfg.hidden;
  for (int layer = 1; layer <= 2; ++layer) {
    const std::size_t in = layer == 1 ? cfg.conv2_channels : 2 * h;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string prefix = "gru" + std::to_string(layer) + "." + dir + ".";
      layout.push_back({prefix + "w_ih", {in, 3 * h}});
      layout.push_back({prefix + "w_hh", {h, 3 * h}});
      layout.push_back({prefix + "b_ih", {3 * h}});
      layout.push_back({prefix + "b_hh", {3 * h}});
    }
  }
  layout.push_back({"attention.weight", {2 * h, cfg.attention_dim}});
  layout.push_back({"attention.bias", {cfg.attention_dim}});
  layout.push_back({"attention.query", {cfg.attention_dim, 1}});
  layout.push_back({"head.weight", {2 * h, cfg.num_classes}});
  layout.push_back({"head.bias", {cfg.num_classes}});
  return layout;
}

namespace {

double fan_in_bound(const std::string& name, const ModelConfig& cfg) {
  std::size_t fan_in = 1;
  if (name.rfind("conv1.", 0) == 0) {
    fan_in = cfg.conv1_kernel * cfg.mel_bins;
  } else if (name.rfind("conv2.", 0) == 0) {
    fan_in = cfg.conv2_kernel * cfg.conv1_channels;
  } else if (name.rfind("gru", 0) == 0) {
    fan_in = cfg.hidden;
  } else if (name == "attention.query") {
    fan_in = cfg.attention_dim;
  } else {
    fan_in = 2 * cfg.hidden;
  }
  return 1.0 / std::sqrt(double(fan_in));
}

Tensor uniform_tensor(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.data()) v = float(dist(rng));
  return t;
}

template <typename T>
NodeRef bidirectional_gru(BasicGraph<T>& g, BasicParamStore<T>& params, const std::string& prefix, NodeRef x,
                          std::size_t hidden) {
  const Shape s = g.shape(x);
  const std::size_t batch = s[0], steps = s[1], in = s[2];
  NodeRef h0 = g.constant(BasicTensor<T>(Shape{batch, hidden}));
  std::vector<NodeRef> directions;
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = prefix + "." + dir + ".";
    NodeRef wi = g.parameter(params.get(p + "w_ih"));
    NodeRef wh = g.parameter(params.get(p + "w_hh"));
    NodeRef bi = g.parameter(params.get(p + "b_ih"));
    NodeRef bh = g.parameter(params.get(p + "b_hh"));
    const bool forward = std::strcmp(dir, "fwd") == 0;
    std::vector<NodeRef> outs(steps);
    NodeRef h = h0;
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = forward ? k : steps - 1 - k;
      NodeRef xt = g.reshape(g.slice(x, 1, t, t + 1), {std::int64_t(batch), std::int64_t(in)});
      h = g.gru_cell(xt, h, wi, wh, bi, bh);
      outs[t] = g.reshape(h, {std::int64_t(batch), 1, std::int64_t(hidden)});
    }
    directions.push_back(g.concat(outs, 1));
  }
  return g.concat(directions, 2);
}

}  // namespace

AcousticModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  AcousticModel model{cfg, {}};
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : model_layout(cfg)) {
    model.params.add(name, uniform_tensor(shape, fan_in_bound(name, cfg), rng));
  }
  return model;
}

void replace_head(AcousticModel& model, std::size_t num_classes, std::uint64_t seed) {
  model.config.num_classes = num_classes;
  model.config.validate();
  std::mt19937_64 rng(seed);
  const double bound = fan_in_bound("head.weight", model.config);
  model.params.erase("head.weight");
  model.params.erase("head.bias");
  model.params.add("head.weight", uniform_tensor({model.config.embedding_dim(), num_classes}, bound, rng));
  model.params.add("head.bias", uniform_tensor({num_classes}, bound, rng));
}

template <typename T>
AmOutput forward_am(BasicGraph<T>& g, const ModelConfig& cfg, BasicParamStore<T>& params, NodeRef mel) {
  Shape s = g.shape(mel);
  if (s.size() == 2) {
    mel = g.reshape(mel, {1, std::int64_t(s[0]), std::int64_t(s[1])});
    s = g.shape(mel);
  }
  if (s.size() != 3 || s[2] != cfg.mel_bins) {
    throw ShapeError("forward_am: expected mel input [B, T, " + std::to_string(cfg.mel_bins) + "], got " +
                     shape_str(s));
  }
  if (s[1] < cfg.min_frames()) {
    throw ShapeError("forward_am: need at least " + std::to_string(cfg.min_frames()) + " frames, got " +
                     std::to_string(s[1]));
  }
  auto param = [&](const std::string& name) { return g.parameter(params.get(name)); };

  NodeRef x = mel;
  if (cfg.input_shift != 0.0) x = g.add(x, g.scalar(T(cfg.input_shift)));
  if (cfg.input_scale != 1.0) x = g.mul(x, g.scalar(T(cfg.input_scale)));
  x = g.tanh(g.add(g.conv1d(x, param("conv1.weight"), cfg.conv_stride), param("conv1.bias")));
  x = g.tanh(g.add(g.conv1d(x, param("conv2.weight"), cfg.conv_stride), param("conv2.bias")));
  x = bidirectional_gru(g, params, "gru1", x, cfg.hidden);
  NodeRef states = bidirectional_gru(g, params, "gru2", x, cfg.hidden);

  const Shape hs = g.shape(states);
  const auto batch = std::int64_t(hs[0]);
  const auto steps = std::int64_t(hs[1]);
  NodeRef u = g.tanh(g.add(g.matmul(states, param("attention.weight")), param("attention.bias")));
  NodeRef scores = g.reshape(g.matmul(u, param("attention.query")), {batch, steps});
  NodeRef weights = g.softmax(scores);
  NodeRef pooled = g.reduce_sum(g.mul(states, g.reshape(weights, {batch, steps, 1})), 1);
  NodeRef logits = g.add(g.matmul(pooled, param("head.weight")), param("head.bias"));
  return AmOutput{logits, pooled, weights};
}

template AmOutput forward_am<float>(Graph&, const ModelConfig&, ParamStore&, NodeRef);
template AmOutput forward_am<double>(GraphD&, const ModelConfig&, BasicParamStore<double>&, NodeRef);

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > limit_) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  }
  std::uint16_t u16() {
    const auto* p = take(2);
    return std::uint16_t(p[0] | (p[1] << 8));
  }
  std::uint8_t u8() { return *take(1); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return std::uint32_t(crc32(crc32(0L, Z_NULL, 0), data, uInt(n)));
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& params) {
  std::vector<std::uint8_t> out{'A', 'R', 'S', 'C'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(params.num_tensors()));
  for (const auto& [name, p] : params) {
    if (name.size() > 0xFFFF) throw Error("tensor name too long: " + name);
    out.push_back(std::uint8_t(name.size()));
    out.push_back(std::uint8_t(name.size() >> 8));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(std::uint8_t(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put_u32(out, std::uint32_t(d));
    for (float v : p.tensor.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

ParamStore deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 4) throw CheckpointError(Kind::Truncated, "checkpoint truncated");
  if (std::memcmp(bytes.data(), "ARSC", 4) != 0) throw CheckpointError(Kind::BadMagic, "bad magic");
  if (bytes.size() < 16) throw CheckpointError(Kind::Truncated, "checkpoint truncated");
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::VersionMismatch,
                          "version mismatch: file has " + std::to_string(version) + ", expected 1");
  }
  const std::uint32_t count = r.u32();
  ParamStore params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    const auto* name_bytes = r.take(len);
    std::string name(reinterpret_cast<const char*>(name_bytes), len);
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) {
      const std::uint32_t bits = r.u32();
      std::memcpy(&v, &bits, 4);
    }
    if (params.contains(name)) throw CheckpointError(Kind::UnknownTensor, "duplicate tensor '" + name + "'");
    params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos() != body) throw CheckpointError(Kind::Truncated, "checkpoint has unexpected trailing bytes");
  const std::uint32_t stored = std::uint32_t(bytes[body]) | (std::uint32_t(bytes[body + 1]) << 8) |
                               (std::uint32_t(bytes[body + 2]) << 16) | (std::uint32_t(bytes[body + 3]) << 24);
  if (stored != crc_of(bytes.data(), body)) throw CheckpointError(Kind::ChecksumMismatch, "checksum mismatch");
  return params;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot write '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "write failed for '" + path.string() + "'");
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

namespace {

void check_layout(const ParamStore& params, const ModelConfig& cfg) {
  using Kind = CheckpointError::Kind;
  std::set<std::string> expected;
  for (const auto& [name, shape] : model_layout(cfg)) {
    expected.insert(name);
    if (!params.contains(name)) throw CheckpointError(Kind::MissingTensor, "missing tensor '" + name + "'");
    if (params.get(name).tensor.shape() != shape) {
      throw CheckpointError(Kind::ShapeMismatch, "tensor '" + name + "' has shape " +
                                                     shape_str(params.get(name).tensor.shape()) + ", expected " +
                                                     shape_str(shape));
    }
  }
  for (const auto& [name, _] : params) {
    if (!expected.count(name)) throw CheckpointError(Kind::UnknownTensor, "unknown tensor '" + name + "'");
  }
}

}  // namespace

AcousticModel load_model(const std::filesystem::path& path, const ModelConfig& cfg) {
  ParamStore params = load_checkpoint(path);
  check_layout(params, cfg);
  return AcousticModel{cfg, std::move(params)};
}

ModelConfig infer_model_config(const ParamStore& params, const ModelConfig& base) {
  using Kind = CheckpointError::Kind;
  auto shape_of = [&](const std::string& name) -> const Shape& {
    if (!params.contains(name)) throw CheckpointError(Kind::MissingTensor, "missing tensor '" + name + "'");
    return params.get(name).tensor.shape();
  };
  ModelConfig cfg = base;
  const Shape& c1 = shape_of("conv1.weight");
  const Shape& c2 = shape_of("conv2.weight");
  const Shape& whh = shape_of("gru1.fwd.w_hh");
  const Shape& att = shape_of("attention.weight");
  const Shape& head = shape_of("head.weight");
  if (c1.size() != 3 || c2.size() != 3 || whh.size() != 2 || att.size() != 2 || head.size() != 2) {
    throw CheckpointError(Kind::ShapeMismatch, "checkpoint tensors do not describe an acoustic model");
  }
  cfg.conv1_kernel = c1[0];
  cfg.mel_bins = c1[1];
  cfg.conv1_channels = c1[2];
  cfg.conv2_kernel = c2[0];
  cfg.conv2_channels = c2[2];
  cfg.hidden = whh[0];
  cfg.attention_dim = att[1];
  cfg.num_classes = head[1];
  cfg.validate();
  return cfg;
}

AcousticModel load_model(const std::filesystem::path& path) {
  ParamStore params = load_checkpoint(path);
  ModelConfig cfg = infer_model_config(params);
  check_layout(params, cfg);
  return AcousticModel{cfg, std::move(params)};
}

}  // namespace arscr
