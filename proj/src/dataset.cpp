#include "arscr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "arscr/error.hpp"

namespace arscr {

namespace fs = std::filesystem;

void DatasetManifest::validate() const {
  std::set<fs::path> seen;
  for (const auto* split : {&train, &validation, &test}) {
    for (const auto& e : *split) {
      if (e.label < 0 || std::size_t(e.label) >= class_names.size()) {
        throw Error("manifest entry '" + e.path.string() + "' has out-of-range label");
      }
      if (!seen.insert(e.path).second) throw Error("path '" + e.path.string() + "' appears in two splits");
    }
  }
  std::vector<bool> present(class_names.size(), false);
  for (const auto& e : train) present[std::size_t(e.label)] = true;
  for (std::size_t c = 0; c < present.size(); ++c) {
    if (!present[c]) throw Error("class '" + class_names[c] + "' has no training files");
  }
}

DatasetManifest scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error("dataset root '" + root.string() + "' is not a directory");
  DatasetManifest m;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) m.class_names.push_back(entry.path().filename().string());
  }
  std::sort(m.class_names.begin(), m.class_names.end());
  if (m.class_names.empty()) throw Error("dataset root '" + root.string() + "' has no class folders");

  std::vector<std::vector<fs::path>> files(m.class_names.size());
  for (std::size_t c = 0; c < m.class_names.size(); ++c) {
    for (const auto& entry : fs::directory_iterator(root / m.class_names[c])) {
      if (entry.is_regular_file() && entry.path().extension() == ".wav") files[c].push_back(entry.path());
    }
    std::sort(files[c].begin(), files[c].end());
    if (files[c].empty()) throw Error("class folder '" + m.class_names[c] + "' contains no .wav files");
  }

  const fs::path splits_file = root / "splits.json";
  if (fs::exists(splits_file)) {
    std::ifstream in(splits_file);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw Error("cannot parse '" + splits_file.string() + "': " + e.what());
    }
    std::set<fs::path> validation, test;
    for (const auto& [key, target] : {std::pair{"validation", &validation}, std::pair{"test", &test}}) {
      if (!doc.contains(key)) continue;
      if (!doc[key].is_array()) throw Error("splits.json: '" + std::string(key) + "' must be an array of paths");
      for (const auto& p : doc[key]) target->insert((root / p.get<std::string>()).lexically_normal());
    }
    for (std::size_t c = 0; c < files.size(); ++c) {
      for (const auto& f : files[c]) {
        const fs::path norm = f.lexically_normal();
        ManifestEntry e{f, int(c)};
        if (validation.count(norm)) {
          m.validation.push_back(e);
        } else if (test.count(norm)) {
          m.test.push_back(e);
        } else {
          m.train.push_back(e);
        }
      }
    }
  } else {
    for (std::size_t c = 0; c < files.size(); ++c) {
      std::size_t kept = 0;
      for (std::size_t i = 0; i < files[c].size(); ++i) {
        ManifestEntry e{files[c][i], int(c)};
        if (i % 5 == 4) {
          m.test.push_back(e);
        } else if (kept++ % 5 == 4) {
          m.validation.push_back(e);
        } else {
          m.train.push_back(e);
        }
      }
    }
  }
  m.validate();
  return m;
}

DatasetManifest limit_split(const DatasetManifest& manifest, std::size_t per_class_limit, std::uint64_t seed) {
  if (per_class_limit < 1) throw Error("limit_split: limit must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(manifest.num_classes());
  for (std::size_t i = 0; i < manifest.train.size(); ++i) by_class[std::size_t(manifest.train[i].label)].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& idx : by_class) {
    if (idx.size() > per_class_limit) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_class_limit);
    }
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  DatasetManifest out = manifest;
  out.train.clear();
  for (auto i : keep) out.train.push_back(manifest.train[i]);
  return out;
}

AudioSet load_split(const DatasetManifest& manifest, const std::vector<ManifestEntry>& split, std::size_t length) {
  AudioSet set;
  set.class_names = manifest.class_names;
  for (const auto& e : split) {
    set.audio.push_back(fix_length(load_wav(e.path), length));
    set.labels.push_back(e.label);
  }
  return set;
}

void SynthSpec::validate() const {
  if (classes.size() < 2) throw Error("synth spec: need at least two classes");
  if (!(noise >= 0)) throw Error("synth spec: noise level must be non-negative");
  if (length == 0) throw Error("synth spec: length must be positive");
  if (!(min_duration > 0 && min_duration <= max_duration && max_duration <= 1.0)) {
    throw Error("synth spec: require 0 < min_duration <= max_duration <= 1");
  }
  if (!(min_level >= 0 && min_level <= max_level && max_level <= 1.0)) {
    throw Error("synth spec: require 0 <= min_level <= max_level <= 1");
  }
  if (!(pitch_jitter >= 0 && pitch_jitter < 1)) throw Error("synth spec: pitch_jitter must lie in [0, 1)");
  for (const auto& c : classes) {
    const double bottom = c.base_hz * (1 - pitch_jitter) - std::max(0.0, -c.chirp_hz_per_s) * double(length) / kSampleRate;
    if (!(bottom > 0)) throw Error("synth spec: class '" + c.name + "' chirps below 0 Hz");
    const double top = (c.base_hz * (1 + pitch_jitter) + std::abs(c.chirp_hz_per_s) * double(length) / kSampleRate) *
                       (c.harmonic > 0 ? 2.0 : 1.0);
    if (!(c.base_hz > 0) || top >= kSampleRate / 2.0) {
      throw Error("synth spec: class '" + c.name + "' exceeds the Nyquist frequency");
    }
  }
}

SynthSpec default_source_spec(std::uint64_t seed) {
  SynthSpec s;
  // Two pitch registers crossed with three chirp/envelope shapes, so every
  // class shares a cue with several others.
  s.classes = {
      {"s0", 700.0, 900.0, Envelope::Hann, 0.3},   {"s1", 700.0, -500.0, Envelope::Decay, 0.3},
      {"s2", 700.0, 0.0, Envelope::Flat, 0.6},     {"s3", 1800.0, 900.0, Envelope::Hann, 0.3},
      {"s4", 1800.0, -500.0, Envelope::Decay, 0.3}, {"s5", 1800.0, 0.0, Envelope::Flat, 0.6},
  };
  s.noise = 0.2;
  s.pitch_jitter = 0.1;
  s.train_per_class = 100;
  s.validation_per_class = 20;
  s.test_per_class = 20;
  s.seed = seed;
  return s;
}

SynthSpec derived_target_spec(const SynthSpec& source, const std::vector<int>& planted, double shift,
                              std::uint64_t seed) {
  SynthSpec t = source;
  t.classes.clear();
  for (std::size_t c = 0; c < planted.size(); ++c) {
    if (planted[c] < 0 || std::size_t(planted[c]) >= source.classes.size()) {
      throw Error("derived_target_spec: planted source index out of range");
    }
    ClassPrototype p = source.classes[std::size_t(planted[c])];
    p.name = "t" + std::to_string(c);
    p.base_hz *= 1.0 + shift;
    p.chirp_hz_per_s *= 1.0 - shift;
    t.classes.push_back(p);
  }
  t.train_per_class = 20;
  t.validation_per_class = 0;
  t.test_per_class = 30;
  t.seed = seed;
  return t;
}

SynthSpec default_target_spec(std::uint64_t seed) {
  return derived_target_spec(default_source_spec(0), {4, 1, 3}, kDefaultTargetShift, seed);
}

namespace {

double envelope_at(Envelope env, double u) {
  switch (env) {
    case Envelope::Hann: return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * u);
    case Envelope::Decay: return std::min(1.0, u * 20.0) * std::exp(-4.0 * u);
    case Envelope::Flat: return std::min({1.0, u * 20.0, (1.0 - u) * 20.0});
  }
  return 0.0;
}

Waveform render(const ClassPrototype& proto, const SynthSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double duration = spec.min_duration + (spec.max_duration - spec.min_duration) * unit(rng);
  const std::size_t active = std::max<std::size_t>(1, std::size_t(duration * double(spec.length)));
  const std::size_t onset = std::size_t(unit(rng) * double(spec.length - active));
  const double f0 = proto.base_hz * (1.0 + spec.pitch_jitter * (2.0 * unit(rng) - 1.0));
  const double amp = spec.min_level + (spec.max_level - spec.min_level) * unit(rng);
  Waveform w;
  w.samples.assign(spec.length, 0.0f);
  double phase = 0;
  for (std::size_t i = 0; i < active; ++i) {
    const double t = double(i) / kSampleRate;
    const double f = f0 + proto.chirp_hz_per_s * t;
    phase += 2.0 * std::numbers::pi * f / kSampleRate;
    const double env = envelope_at(proto.envelope, double(i) / double(active));
    const double v = amp * env * (std::sin(phase) + proto.harmonic * std::sin(2.0 * phase)) / (1.0 + proto.harmonic);
    w.samples[onset + i] = float(v);
  }
  for (auto& s : w.samples) {
    const double v = double(s) + spec.noise * gauss(rng);
    s = float(std::clamp(v, -1.0, 32767.0 / 32768.0));
  }
  return w;
}

}  // namespace

SynthData synthesize(const SynthSpec& spec) {
  spec.validate();
  SynthData data;
  for (auto* set : {&data.train, &data.validation, &data.test}) {
    for (const auto& c : spec.classes) set->class_names.push_back(c.name);
  }
  // One stream per (split, class) keeps each split stable when others change size.
  const std::size_t counts[3] = {spec.train_per_class, spec.validation_per_class, spec.test_per_class};
  AudioSet* sets[3] = {&data.train, &data.validation, &data.test};
  for (std::size_t split = 0; split < 3; ++split) {
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
      std::seed_seq seq{std::uint64_t(spec.seed), std::uint64_t(split), std::uint64_t(c)};
      std::mt19937_64 rng(seq);
      for (std::size_t i = 0; i < counts[split]; ++i) {
        sets[split]->audio.push_back(render(spec.classes[c], spec, rng));
        sets[split]->labels.push_back(int(c));
      }
    }
  }
  return data;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  SynthData data = synthesize(spec);
  std::vector<std::string> names;
  for (const auto& c : spec.classes) names.push_back(c.name);
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error("synth spec: class names must be unique");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create '" + out_dir.string() + "': " + ec.message());

  nlohmann::json splits = {{"validation", nlohmann::json::array()}, {"test", nlohmann::json::array()}};
  const std::pair<const char*, const AudioSet*> parts[] = {
      {"train", &data.train}, {"validation", &data.validation}, {"test", &data.test}};
  for (const auto& [split, set] : parts) {
    std::vector<std::size_t> index_in_class(names.size(), 0);
    for (std::size_t i = 0; i < set->size(); ++i) {
      const auto& name = names[std::size_t(set->labels[i])];
      fs::create_directories(out_dir / name, ec);
      if (ec) throw Error("cannot create '" + (out_dir / name).string() + "': " + ec.message());
      char file[64];
      std::snprintf(file, sizeof(file), "%s_%04zu.wav", split, index_in_class[std::size_t(set->labels[i])]++);
      write_wav(out_dir / name / file, set->audio[i]);
      const std::string rel = name + "/" + file;
      if (std::string(split) != "train") splits[split].push_back(rel);
    }
  }
  std::ofstream f(out_dir / "splits.json");
  if (!f) throw Error("cannot write splits.json in '" + out_dir.string() + "'");
  f << splits.dump(2) << '\n';
  f.close();
  return scan_dataset(out_dir);
}

}  // namespace arscr
