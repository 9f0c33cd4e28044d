#include "arscr/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "arscr/error.hpp"

namespace arscr {

void MelConfig::validate() const {
  if (frame_length == 0 || hop_length == 0 || fft_size == 0) throw Error("mel config: lengths must be positive");
  if (frame_length > fft_size) throw Error("mel config: frame_length must not exceed fft_size");
  if (mel_bins < 1) throw Error("mel config: mel_bins must be at least 1");
  if (!(fmin >= 0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw Error("mel config: require 0 <= fmin < fmax <= sample_rate / 2");
  }
  if (!(log_floor > 0)) throw Error("mel config: log_floor must be positive");
}

std::size_t MelConfig::num_frames(std::size_t num_samples) const {
  if (num_samples < frame_length) {
    throw Error("waveform too short: " + std::to_string(num_samples) + " samples < frame length " +
                std::to_string(frame_length));
  }
  return 1 + (num_samples - frame_length) / hop_length;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_points(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(cfg.mel_bins + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = lo + (hi - lo) * double(i) / double(cfg.mel_bins + 1);
  return pts;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  cfg.validate();
  auto pts = mel_points(cfg);
  std::vector<double> centers(cfg.mel_bins);
  for (std::size_t m = 0; m < cfg.mel_bins; ++m) centers[m] = mel_to_hz(pts[m + 1]);
  return centers;
}

TensorD mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.num_fft_bins();
  auto pts = mel_points(cfg);
  TensorD fb(Shape{bins, cfg.mel_bins});
  for (std::size_t k = 0; k < bins; ++k) {
    const double mel = hz_to_mel(double(k) * cfg.sample_rate / double(cfg.fft_size));
    for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
      const double left = pts[m], center = pts[m + 1], right = pts[m + 2];
      double w = 0;
      if (mel > left && mel <= center) {
        w = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        w = (right - mel) / (right - center);
      }
      fb.at(k, m) = w;
    }
  }
  return fb;
}

template <typename T>
LogMelExtractor<T>::LogMelExtractor(const MelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t bins = cfg_.num_fft_bins();
  const std::size_t n = cfg_.frame_length;
  dft_kernel_ = BasicTensor<T>(Shape{n, 1, 2 * bins});
  for (std::size_t t = 0; t < n; ++t) {
    const double window = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(t) / double(n));
    for (std::size_t k = 0; k < bins; ++k) {
      const double phase = 2.0 * std::numbers::pi * double((k * t) % cfg_.fft_size) / double(cfg_.fft_size);
      dft_kernel_[t * 2 * bins + k] = T(window * std::cos(phase));
      dft_kernel_[t * 2 * bins + bins + k] = T(-window * std::sin(phase));
    }
  }
  filterbank_ = mel_filterbank(cfg_).template cast<T>();
}

template <typename T>
NodeRef LogMelExtractor<T>::operator()(BasicGraph<T>& g, NodeRef wave) const {
  const Shape& s = g.shape(wave);
  if (s.size() != 2) throw ShapeError("log_mel expects a [batch, samples] waveform, got " + shape_str(s));
  cfg_.num_frames(s[1]);
  const std::size_t bins = cfg_.num_fft_bins();
  NodeRef x = g.reshape(wave, {std::int64_t(s[0]), std::int64_t(s[1]), 1});
  NodeRef spec = g.conv1d(x, g.constant(dft_kernel_), cfg_.hop_length);
  NodeRef re = g.slice(spec, 2, 0, bins);
  NodeRef im = g.slice(spec, 2, bins, 2 * bins);
  NodeRef mag = g.sqrt(g.add(g.square(re), g.square(im)));
  NodeRef mel = g.matmul(mag, g.constant(filterbank_));
  return g.log(g.add(mel, g.scalar(T(cfg_.log_floor))));
}

template class LogMelExtractor<float>;
template class LogMelExtractor<double>;

NodeRef log_mel(Graph& g, NodeRef samples, const MelConfig& cfg) {
  LogMelExtractor<float> extractor(cfg);
  NodeRef out = extractor(g, g.reshape(samples, {1, -1}));
  return g.reshape(out, {-1, std::int64_t(cfg.mel_bins)});
}

Tensor log_mel(const Waveform& w, const MelConfig& cfg) {
  if (w.sample_rate != cfg.sample_rate) throw Error("log_mel: waveform sample rate differs from config");
  Graph g;
  NodeRef x = g.constant(Tensor(Shape{w.samples.size()}, w.samples));
  return g.value(log_mel(g, x, cfg));
}

std::vector<Tensor> log_mel_batch(const std::vector<Waveform>& ws, const LogMelExtractor<float>& extractor) {
  std::vector<Tensor> out;
  out.reserve(ws.size());
  constexpr std::size_t kChunk = 32;
  const auto& cfg = extractor.config();
  for (std::size_t start = 0; start < ws.size(); start += kChunk) {
    const std::size_t end = std::min(ws.size(), start + kChunk);
    const std::size_t len = ws[start].samples.size();
    Tensor batch(Shape{end - start, len});
    for (std::size_t i = start; i < end; ++i) {
      if (ws[i].samples.size() != len) throw ShapeError("log_mel_batch: waveforms must share one length");
      std::copy(ws[i].samples.begin(), ws[i].samples.end(), batch.ptr() + (i - start) * len);
    }
    Graph g;
    const Tensor& mel = g.value(extractor(g, g.constant(std::move(batch))));
    const std::size_t frames = mel.dim(1);
    const std::size_t per = frames * cfg.mel_bins;
    for (std::size_t i = 0; i < end - start; ++i) {
      std::vector<float> data(mel.ptr() + i * per, mel.ptr() + (i + 1) * per);
      out.emplace_back(Shape{frames, cfg.mel_bins}, std::move(data));
    }
  }
  return out;
}

Tensor spec_augment_mask(std::size_t frames, std::size_t bins, const SpecAugmentConfig& cfg, Rng& rng) {
  Tensor mask(Shape{frames, bins}, 1.0f);
  auto draw = [&](std::size_t axis_len, std::size_t max_width) {
    const std::size_t cap = std::min(max_width, axis_len);
    const std::size_t width = std::uniform_int_distribution<std::size_t>(0, cap)(rng);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, axis_len - width)(rng);
    return std::pair{start, width};
  };
  for (std::size_t i = 0; i < cfg.num_freq_masks; ++i) {
    auto [start, width] = draw(bins, cfg.max_freq_width);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = start; f < start + width; ++f) mask.at(t, f) = 0.0f;
    }
  }
  for (std::size_t i = 0; i < cfg.num_time_masks; ++i) {
    auto [start, width] = draw(frames, cfg.max_time_width);
    for (std::size_t t = start; t < start + width; ++t) {
      for (std::size_t f = 0; f < bins; ++f) mask.at(t, f) = 0.0f;
    }
  }
  return mask;
}

Tensor spec_augment(const Tensor& mel, const SpecAugmentConfig& cfg, Rng& rng) {
  if (mel.rank() != 2) throw ShapeError("spec_augment expects a 2-D feature map, got " + shape_str(mel.shape()));
  Tensor mask = spec_augment_mask(mel.dim(0), mel.dim(1), cfg, rng);
  Tensor out = mel;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] == 0.0f) out[i] = 0.0f;
  }
  return out;
}

}  // namespace arscr
