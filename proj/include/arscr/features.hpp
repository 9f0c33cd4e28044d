#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "arscr/audio.hpp"
#include "arscr/graph.hpp"
#include "arscr/tensor.hpp"

namespace arscr {

/// Log-mel front end settings. The defaults (25 ms frames, 10 ms hop,
/// 512-point DFT, 40 HTK-mel bins over 20-8000 Hz) fix the acoustic model
/// input shape.
struct MelConfig {
  std::size_t frame_length = 400;
  std::size_t hop_length = 160;
  std::size_t fft_size = 512;
  std::size_t mel_bins = 40;
  double fmin = 20.0;
  double fmax = 8000.0;
  double log_floor = 1e-6;
  int sample_rate = kSampleRate;

  void validate() const;
  std::size_t num_frames(std::size_t num_samples) const;
  std::size_t num_fft_bins() const { return fft_size / 2 + 1; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters on the mel scale, shape [fft_size/2 + 1, mel_bins], peak 1.
TensorD mel_filterbank(const MelConfig& cfg);
/// Center frequency in Hz of each filter.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

/// Differentiable waveform -> log-mel pipeline:
///   frames (stride hop) x periodic Hann x DFT basis as one conv1d,
///   magnitude sqrt(re^2 + im^2), mel matmul, log(x + log_floor).
/// The DFT basis and filterbank are built once per extractor.
template <typename T>
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const MelConfig& cfg);

  const MelConfig& config() const { return cfg_; }

  /// wave [B, L] -> [B, frames, mel_bins]
  NodeRef operator()(BasicGraph<T>& g, NodeRef wave) const;

 private:
  MelConfig cfg_;
  BasicTensor<T> dft_kernel_;   // [frame_length, 1, 2 * bins]
  BasicTensor<T> filterbank_;   // [bins, mel_bins]
};

extern template class LogMelExtractor<float>;
extern template class LogMelExtractor<double>;

/// Graph-building entry point for one utterance: returns a [frames, mel_bins] node.
NodeRef log_mel(Graph& g, NodeRef samples, const MelConfig& cfg);
/// Evaluated log-mel of a waveform, shape [frames, mel_bins].
Tensor log_mel(const Waveform& w, const MelConfig& cfg);
/// Batched evaluation without gradients, shape [frames, mel_bins] each.
std::vector<Tensor> log_mel_batch(const std::vector<Waveform>& ws, const LogMelExtractor<float>& extractor);

struct SpecAugmentConfig {
  std::size_t num_freq_masks = 2;
  std::size_t max_freq_width = 7;
  std::size_t num_time_masks = 2;
  std::size_t max_time_width = 20;
};

using Rng = std::mt19937_64;

/// 0/1 mask of shape [frames, bins]. Each mask draws its width uniformly from
/// [0, max_width] (clamped to the axis length) and its start uniformly over the
/// valid range. Frequency masks are drawn first, then time masks.
Tensor spec_augment_mask(std::size_t frames, std::size_t bins, const SpecAugmentConfig& cfg, Rng& rng);

/// Zeroes the masked stripes of a 2-D [frames, bins] feature map. Unmasked
/// entries are copied unchanged.
Tensor spec_augment(const Tensor& mel, const SpecAugmentConfig& cfg, Rng& rng);

}  // namespace arscr
