#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace arscr {

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

/// Reads a RIFF/WAVE file holding mono PCM16 at 16 kHz. Samples are scaled by
/// 1/32768. Anything else raises WavError with a distinct kind.
Waveform load_wav(const std::filesystem::path& path);

/// Writes mono PCM16 at the waveform's rate; values are rounded and clipped
/// to the int16 range.
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Zero-pads at the end or center-crops to exactly `target_len` samples.
Waveform fix_length(const Waveform& w, std::size_t target_len);

}  // namespace arscr
