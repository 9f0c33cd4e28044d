#include "arscr/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "arscr/error.hpp"

namespace arscr {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(WavError::Kind::Io, "cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in '" + path.string() + "'";

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw WavError(WavError::Kind::MalformedHeader, "malformed header: not a RIFF/WAVE file" + where);
  }

  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) {
        throw WavError(WavError::Kind::MalformedHeader, "malformed header: truncated fmt chunk" + where);
      }
      const std::uint16_t format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format != 1) {
        throw WavError(WavError::Kind::UnsupportedFormat,
                       "unsupported format tag " + std::to_string(format) + " (expected PCM)" + where);
      }
      if (channels != 1) {
        throw WavError(WavError::Kind::UnsupportedChannels,
                       "unsupported channel count " + std::to_string(channels) + " (expected mono)" + where);
      }
      if (bits != 16) {
        throw WavError(WavError::Kind::UnsupportedBitDepth,
                       "unsupported bit depth " + std::to_string(bits) + " (expected 16)" + where);
      }
      if (rate != std::uint32_t(kSampleRate)) {
        throw WavError(WavError::Kind::UnsupportedSampleRate,
                       "unsupported sample rate " + std::to_string(rate) + " (expected 16000)" + where);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw WavError(WavError::Kind::MalformedHeader, "malformed header: data before fmt" + where);
      if (body + size > bytes.size() || size % 2 != 0) {
        throw WavError(WavError::Kind::MalformedHeader, "malformed header: truncated data chunk" + where);
      }
      Waveform w;
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        w.samples[i] = float(v) / 32768.0f;
      }
      if (w.samples.empty()) throw WavError(WavError::Kind::MalformedHeader, "empty data chunk" + where);
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw WavError(WavError::Kind::MalformedHeader, "malformed header: missing fmt or data chunk" + where);
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, std::uint32_t(w.sample_rate));
  put_u32(out, std::uint32_t(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : w.samples) {
    const double scaled = std::nearbyint(double(s) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw WavError(WavError::Kind::Io, "cannot write '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw WavError(WavError::Kind::Io, "write failed for '" + path.string() + "'");
}

Waveform fix_length(const Waveform& w, std::size_t target_len) {
  if (target_len == 0) throw Error("fix_length: target length must be positive");
  Waveform out;
  out.sample_rate = w.sample_rate;
  const std::size_t n = w.samples.size();
  if (n <= target_len) {
    out.samples = w.samples;
    out.samples.resize(target_len, 0.0f);
  } else {
    const std::size_t start = (n - target_len) / 2;
    out.samples.assign(w.samples.begin() + std::ptrdiff_t(start),
                       w.samples.begin() + std::ptrdiff_t(start + target_len));
  }
  return out;
}

}  // namespace arscr
