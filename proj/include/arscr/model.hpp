#pragma once

// Acoustic model: two strided 1-D convolutions over time, two bidirectional
// gated recurrent layers, single-query additive attention pooling, and a
// dense head.
//
//   mel [B, T, F] -> (x + input_shift) * input_scale
//   conv1 (k=5, s=2) + tanh -> conv2 (k=5, s=2) + tanh
//   bigru1 -> bigru2                  (forward/backward states concatenated)
//   u_t = tanh(h_t W_a + b_a), s_t = u_t q, a = softmax_t(s), e = sum_t a_t h_t
//   logits = e W_o + b_o
//
// The default configuration has 200,103 parameters.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "arscr/graph.hpp"
#include "arscr/params.hpp"

namespace arscr {

struct ModelConfig {
  std::size_t mel_bins = 40;
  std::size_t conv1_channels = 68;
  std::size_t conv1_kernel = 5;
  std::size_t conv2_channels = 96;
  std::size_t conv2_kernel = 5;
  std::size_t conv_stride = 2;
  std::size_t hidden = 64;
  std::size_t attention_dim = 96;
  std::size_t num_classes = 35;
  // Fixed input normalization; not trainable and not serialized. The default
  // centers log-mel features of the synthetic corpus.
  double input_shift = -2.5;
  double input_scale = 1.0;

  void validate() const;
  std::size_t embedding_dim() const { return 2 * hidden; }
  /// Smallest frame count that survives both convolutions.
  std::size_t min_frames() const;
  bool operator==(const ModelConfig&) const = default;
};

struct AcousticModel {
  ModelConfig config;
  ParamStore params;
};

/// Parameter names and shapes implied by a config, in initialization order.
std::vector<std::pair<std::string, Shape>> model_layout(const ModelConfig& cfg);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
AcousticModel init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Replaces the dense head with a freshly initialized one for `num_classes`.
void replace_head(AcousticModel& model, std::size_t num_classes, std::uint64_t seed);

struct AmOutput {
  NodeRef logits;     // [B, classes]
  NodeRef embedding;  // [B, 2 * hidden]
  NodeRef attention;  // [B, T']
};

/// `mel` is [B, T, mel_bins] or [T, mel_bins].
template <typename T>
AmOutput forward_am(BasicGraph<T>& g, const ModelConfig& cfg, BasicParamStore<T>& params, NodeRef mel);

extern template AmOutput forward_am<float>(Graph&, const ModelConfig&, ParamStore&, NodeRef);
extern template AmOutput forward_am<double>(GraphD&, const ModelConfig&, BasicParamStore<double>&, NodeRef);

/// Binary checkpoint: "ARSC", u32 version 1, u32 tensor count, then per tensor
/// u16 name length, name, u8 rank, u32 dims, f32 values; trailing CRC32. All LE.
std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& params);
ParamStore deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);
/// Loads and checks every tensor against the layout of `cfg`.
AcousticModel load_model(const std::filesystem::path& path, const ModelConfig& cfg);
/// Recovers layer sizes from tensor shapes; normalization fields keep `base` values.
ModelConfig infer_model_config(const ParamStore& params, const ModelConfig& base = {});
AcousticModel load_model(const std::filesystem::path& path);

}  // namespace arscr
