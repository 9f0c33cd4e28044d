#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "arscr/audio.hpp"

namespace arscr {

struct ManifestEntry {
  std::filesystem::path path;
  int label = 0;
  bool operator==(const ManifestEntry&) const = default;
};

/// Class ids are dense and follow the lexicographic order of class folder names.
struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> validation;
  std::vector<ManifestEntry> test;

  std::size_t num_classes() const { return class_names.size(); }
  /// Throws if a path appears in two splits or a class has no training file.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

/// Decoded utterances with labels.
struct AudioSet {
  std::vector<std::string> class_names;
  std::vector<Waveform> audio;
  std::vector<int> labels;

  std::size_t size() const { return audio.size(); }
  std::size_t num_classes() const { return class_names.size(); }
};

/// Reads `root/<class>/*.wav`. Split membership comes from `root/splits.json`
/// ({"validation": [...], "test": [...]}, paths relative to root) when present.
/// Without it, every 5th file of a class (sorted order) goes to test and every
/// 5th remaining file to validation.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Subsamples the training split to at most `per_class_limit` files per class,
/// uniformly without replacement. Validation and test are untouched.
DatasetManifest limit_split(const DatasetManifest& manifest, std::size_t per_class_limit, std::uint64_t seed);

/// Loads a split, fixing every utterance to `length` samples.
AudioSet load_split(const DatasetManifest& manifest, const std::vector<ManifestEntry>& split, std::size_t length);

enum class Envelope { Hann, Decay, Flat };

struct ClassPrototype {
  std::string name;
  double base_hz = 500.0;
  double chirp_hz_per_s = 0.0;
  Envelope envelope = Envelope::Hann;
  /// Amplitude of the second harmonic relative to the fundamental.
  double harmonic = 0.3;
};

/// Desk-scale stand-in for a spoken command corpus: each class is an
/// enveloped chirp. Every utterance draws a random onset, duration, pitch and
/// level jitter and additive white noise. With noise 0, no pitch jitter, a
/// single level and a full-length duration, all utterances of a class are
/// identical.
struct SynthSpec {
  std::vector<ClassPrototype> classes;
  double noise = 0.05;
  std::size_t length = 16000;
  std::size_t train_per_class = 20;
  std::size_t validation_per_class = 0;
  std::size_t test_per_class = 20;
  /// Relative pitch jitter (uniform in +-jitter).
  double pitch_jitter = 0.03;
  /// Utterance duration range as a fraction of `length`.
  double min_duration = 0.45;
  double max_duration = 0.75;
  /// Peak amplitude range.
  double min_level = 0.3;
  double max_level = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Default desk-scale source task (6 classes).
SynthSpec default_source_spec(std::uint64_t seed);
/// Target task whose class c is a perturbed copy of source class `planted[c]`:
/// pitch shifted by `shift` (relative), chirp scaled, envelope kept.
SynthSpec derived_target_spec(const SynthSpec& source, const std::vector<int>& planted, double shift,
                              std::uint64_t seed);
inline constexpr double kDefaultTargetShift = 0.08;

/// Default desk-scale target task (3 classes planted on source classes 4, 1, 3).
SynthSpec default_target_spec(std::uint64_t seed);

/// In-memory generation; split order is train, validation, test.
struct SynthData {
  AudioSet train;
  AudioSet validation;
  AudioSet test;
};
SynthData synthesize(const SynthSpec& spec);

/// Writes the synthetic corpus as PCM16 WAVs under `out_dir/<class>/` plus a
/// splits.json, and returns its manifest.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace arscr
