#include "arscr/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "arscr/error.hpp"

namespace arscr {

using nlohmann::json;

namespace {

// Integers built in code are signed even when non-negative.
bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

// Reads the fields of one JSON object, tracking which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string child(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed fields are read as size_t");
  void get(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!is_count(*v)) throw ConfigError(child(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(child(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(child(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(child(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (obj_.contains(key)) {
      T value{};
      get(key, value);
      out = value;
    } else {
      seen_.insert(key);
    }
  }

  // Parses a string field through `parse`, reporting failures at the field.
  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    if (!obj_.contains(key)) {
      seen_.insert(key);
      return;
    }
    get(key, s);
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw ConfigError(child(key), e.what());
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

void read_mel(const json& j, const std::string& path, MelConfig& m) {
  ObjectReader r(j, path);
  r.get("frame_length", m.frame_length);
  r.get("hop_length", m.hop_length);
  r.get("fft_size", m.fft_size);
  r.get("mel_bins", m.mel_bins);
  r.get("fmin", m.fmin);
  r.get("fmax", m.fmax);
  r.get("log_floor", m.log_floor);
  r.finish();
  checked(path, [&] { m.validate(); });
}

void read_spec_augment(const json& j, const std::string& path, SpecAugmentConfig& s) {
  ObjectReader r(j, path);
  r.get("num_freq_masks", s.num_freq_masks);
  r.get("max_freq_width", s.max_freq_width);
  r.get("num_time_masks", s.num_time_masks);
  r.get("max_time_width", s.max_time_width);
  r.finish();
}

void read_model(const json& j, const std::string& path, ModelConfig& m) {
  ObjectReader r(j, path);
  r.get("conv1_channels", m.conv1_channels);
  r.get("conv1_kernel", m.conv1_kernel);
  r.get("conv2_channels", m.conv2_channels);
  r.get("conv2_kernel", m.conv2_kernel);
  r.get("conv_stride", m.conv_stride);
  r.get("hidden", m.hidden);
  r.get("attention_dim", m.attention_dim);
  r.get("num_classes", m.num_classes);
  r.get("input_shift", m.input_shift);
  r.get("input_scale", m.input_scale);
  r.finish();
  checked(path, [&] { m.validate(); });
}

void read_synth(const json& j, const std::string& path, SynthConfig& s) {
  ObjectReader r(j, path);
  r.get("kind", s.kind);
  if (s.kind != "source" && s.kind != "target") {
    throw ConfigError(path + "/kind", "expected \"source\" or \"target\"");
  }
  r.get("seed", s.seed);
  r.get("noise", s.noise);
  r.get("pitch_jitter", s.pitch_jitter);
  if (const json* p = r.find("planted")) {
    if (!p->is_array()) throw ConfigError(path + "/planted", "expected an array of source class indices");
    s.planted.clear();
    for (std::size_t i = 0; i < p->size(); ++i) {
      if (!is_count((*p)[i])) {
        throw ConfigError(path + "/planted/" + std::to_string(i), "expected a non-negative integer");
      }
      s.planted.push_back((*p)[i].get<int>());
    }
  }
  r.get("shift", s.shift);
  r.get("train_per_class", s.train_per_class);
  r.get("validation_per_class", s.validation_per_class);
  r.get("test_per_class", s.test_per_class);
  r.finish();
  checked(path, [&] { s.spec().validate(); });
}

SystemSpec read_system(const json& j, const std::string& path) {
  SystemSpec s;
  if (j.is_string()) {
    s.name = j.get<std::string>();
    checked(path, [&] { s.regime = parse_regime(s.name); });
    return s;
  }
  ObjectReader r(j, path);
  r.get("name", s.name);
  r.get_enum("regime", s.regime, parse_regime);
  if (!j.contains("regime")) throw ConfigError(path + "/regime", "missing");
  MappingKind kind{};
  if (j.contains("mapping")) {
    r.get_enum("mapping", kind, parse_mapping_kind);
    s.mapping = kind;
  } else {
    r.find("mapping");
  }
  r.get("augment", s.augment);
  r.finish();
  if (s.name.empty()) s.name = to_string(s.regime);
  return s;
}

}  // namespace

SynthSpec SynthConfig::spec() const {
  SynthSpec s = default_source_spec(seed);
  if (kind == "target") s = derived_target_spec(default_source_spec(seed), planted, shift, seed);
  if (noise) s.noise = *noise;
  if (pitch_jitter) s.pitch_jitter = *pitch_jitter;
  if (train_per_class) s.train_per_class = *train_per_class;
  if (validation_per_class) s.validation_per_class = *validation_per_class;
  if (test_per_class) s.test_per_class = *test_per_class;
  return s;
}

CliConfig parse_config(const json& doc) {
  CliConfig c;
  ObjectReader r(doc, "");
  TrainConfig& t = c.train;
  r.get_enum("regime", t.regime, parse_regime);
  r.get("dataset", c.dataset);
  r.get("source_dataset", c.source_dataset);
  r.get("checkpoint", c.checkpoint);
  r.get("output", c.output);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("lr_am", t.lr_am);
  r.get("lr_theta", t.lr_theta);
  r.get("seed", t.seed);
  r.get_enum("mapping", t.mapping, parse_mapping_kind);
  r.get("k", t.k);
  r.get_enum("reprogram_domain", t.reprogram_domain, parse_domain);
  r.get_enum("reprogram_mode", t.reprogram_mode, parse_mode);
  r.get("target_samples", t.target_samples);
  r.get("augment", t.augment);
  r.get("per_class_limit", t.per_class_limit);
  r.get("runs", c.runs);
  r.get("reference", c.reference);
  if (const json* m = r.find("mel")) read_mel(*m, "/mel", t.mel);
  if (const json* s = r.find("spec_augment")) read_spec_augment(*s, "/spec_augment", t.spec_augment);
  if (const json* m = r.find("model")) read_model(*m, "/model", t.model);
  if (const json* s = r.find("synth")) read_synth(*s, "/synth", c.synth);
  if (const json* s = r.find("systems")) {
    if (!s->is_array()) throw ConfigError("/systems", "expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < s->size(); ++i) {
      const std::string path = "/systems/" + std::to_string(i);
      c.systems.push_back(read_system((*s)[i], path));
      if (!names.insert(c.systems.back().name).second) throw ConfigError(path, "duplicate system name");
    }
  }
  r.finish();

  if (t.k != 2 && t.k != 3) throw ConfigError("/k", "k must be 2 or 3");
  if (t.epochs == 0) throw ConfigError("/epochs", "epochs must be positive");
  if (t.batch_size == 0) throw ConfigError("/batch_size", "batch_size must be positive");
  if (!(t.lr_am > 0)) throw ConfigError("/lr_am", "learning rate must be positive");
  if (!(t.lr_theta > 0)) throw ConfigError("/lr_theta", "learning rate must be positive");
  if (c.runs < 2) throw ConfigError("/runs", "an experiment needs at least two runs");
  t.model.mel_bins = t.mel.mel_bins;
  checked("", [&] { t.validate(); });
  return c;
}

CliConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  throw Error("unknown report format '" + s + "' (expected json or csv)");
}

json report_to_json(const ExperimentReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"run_index", run.run_index},
                    {"seed", run.seed},
                    {"accuracy", run.accuracy},
                    {"loss_curve", run.loss_curve},
                    {"trainable_params", run.trainable_params}});
  }
  return {{"system", r.system},
          {"limit", r.limit},
          {"avg_acc_pct", r.mean_accuracy},
          {"std_pct", r.std_accuracy},
          {"rel_imp_pct", r.rel_improvement ? json(*r.rel_improvement) : json(nullptr)},
          {"baseline_system", r.baseline_system},
          {"n_runs", r.runs.size()},
          {"trainable_params", r.trainable_params()},
          {"runs", runs}};
}

ExperimentReport report_from_json(const json& j) {
  try {
    ExperimentReport r;
    r.system = j.at("system").get<std::string>();
    r.limit = j.at("limit").get<std::size_t>();
    r.mean_accuracy = j.at("avg_acc_pct").get<double>();
    r.std_accuracy = j.at("std_pct").get<double>();
    if (!j.at("rel_imp_pct").is_null()) r.rel_improvement = j.at("rel_imp_pct").get<double>();
    r.baseline_system = j.at("baseline_system").get<std::string>();
    for (const auto& run : j.at("runs")) {
      RunReport rr;
      rr.run_index = run.at("run_index").get<std::size_t>();
      rr.seed = run.at("seed").get<std::uint64_t>();
      rr.accuracy = run.at("accuracy").get<double>();
      rr.loss_curve = run.at("loss_curve").get<std::vector<double>>();
      rr.trainable_params = run.at("trainable_params").get<std::size_t>();
      r.runs.push_back(std::move(rr));
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string csv_row(const ExperimentReport& r) {
  std::ostringstream os;
  os << r.system << ',' << (r.limit > 0 ? std::to_string(r.limit) : "") << ',' << fixed2(r.mean_accuracy) << ','
     << (r.rel_improvement ? fixed2(*r.rel_improvement) : "") << ',' << fixed2(r.std_accuracy) << ','
     << r.runs.size() << ',' << r.trainable_params();
  return os.str();
}

std::string reports_to_csv(const std::vector<ExperimentReport>& reports) {
  std::string out = "system,limit,avg_acc_pct,rel_imp_pct,std_pct,n_runs,trainable_params\n";
  for (const auto& r : reports) out += csv_row(r) + "\n";
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error("cannot create '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

void write_reports(const std::vector<ExperimentReport>& reports, const std::filesystem::path& path,
                   ReportFormat format) {
  if (format == ReportFormat::Csv) {
    write_text(path, reports_to_csv(reports));
    return;
  }
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  write_text(path, json{{"reports", arr}}.dump(2) + "\n");
}

void write_report(const ExperimentReport& report, const std::filesystem::path& path, ReportFormat format) {
  write_reports({report}, path, format);
}

std::vector<ExperimentReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
  if (!doc.contains("reports") || !doc["reports"].is_array()) throw Error("malformed report: missing 'reports'");
  std::vector<ExperimentReport> out;
  for (const auto& r : doc["reports"]) out.push_back(report_from_json(r));
  return out;
}

}  // namespace arscr
