#include "arscr/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "arscr/config.hpp"
#include "arscr/error.hpp"

namespace arscr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> runs;
  std::string model;
  std::string theta;
  std::string mapping;
};

CliConfig load(const Overrides& o) {
  CliConfig c = parse_config_file(o.config);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.synth.seed = *o.seed;
  }
  if (o.out) c.output = *o.out;
  if (o.runs) {
    if (*o.runs < 2) throw ConfigError("/runs", "an experiment needs at least two runs");
    c.runs = *o.runs;
  }
  return c;
}

void require_dir(const std::string& path, const std::string& field) {
  if (path.empty()) throw ConfigError("/" + field, "required for this command");
  if (!fs::is_directory(path)) throw ConfigError("/" + field, "'" + path + "' is not a directory");
}

void require_file(const std::string& path, const std::string& field) {
  if (path.empty()) throw ConfigError("/" + field, "required for this command");
  if (!fs::is_regular_file(path)) throw ConfigError("/" + field, "'" + path + "' does not exist");
}

constexpr std::size_t kUtteranceSamples = kSampleRate;

TargetData load_prepared(const std::string& root, const MelConfig& mel) {
  DatasetManifest m = scan_dataset(root);
  return prepare_target(load_split(m, m.train, kUtteranceSamples), load_split(m, m.validation, kUtteranceSamples),
                        load_split(m, m.test, kUtteranceSamples), mel);
}

AcousticModel load_pretrained(const std::string& path, const ModelConfig& base) {
  return load_model(path, infer_model_config(load_checkpoint(path), base));
}

// Source utterances used as the similarity reference: validation split when
// present, else training split.
ClassRepresentations reference_representations(const CliConfig& c, const AcousticModel& model) {
  TargetData source = load_prepared(c.source_dataset, c.train.mel);
  const PreparedSet& ref = source.validation.size() > 0 ? source.validation : source.train;
  if (ref.num_classes() != model.config.num_classes) {
    throw Error("source dataset has " + std::to_string(ref.num_classes()) + " classes, checkpoint head has " +
                std::to_string(model.config.num_classes));
  }
  return source_representations(model, ref, c.train.mel);
}

json mapping_to_json(const LabelMapping& m, MappingKind kind, const std::vector<std::string>& targets,
                     const std::vector<std::string>& sources) {
  json arr = json::array();
  for (std::size_t t = 0; t < m.num_targets(); ++t) {
    json names = json::array();
    for (int s : m.sources[t]) names.push_back(s < int(sources.size()) ? sources[std::size_t(s)] : std::to_string(s));
    arr.push_back({{"target", t < targets.size() ? targets[t] : std::to_string(t)},
                   {"sources", m.sources[t]},
                   {"source_names", names}});
  }
  return {{"kind", to_string(kind)}, {"k", m.k}, {"num_sources", m.num_sources}, {"targets", arr}};
}

LabelMapping mapping_from_json(const json& j) {
  try {
    LabelMapping m;
    m.k = j.at("k").get<std::size_t>();
    m.num_sources = j.at("num_sources").get<std::size_t>();
    for (const auto& t : j.at("targets")) m.sources.push_back(t.at("sources").get<std::vector<int>>());
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed mapping file: ") + e.what());
  }
}

std::string similarity_csv(const SimilarityMatrix& sim, const std::vector<std::string>& targets,
                           const std::vector<std::string>& sources) {
  std::ostringstream os;
  os << "target";
  for (const auto& s : sources) os << ',' << s;
  os << '\n';
  char buf[32];
  for (std::size_t t = 0; t < sim.num_targets; ++t) {
    os << targets[t];
    for (std::size_t s = 0; s < sim.num_sources; ++s) {
      std::snprintf(buf, sizeof(buf), "%.6f", sim.at(t, s));
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::string> source_names(const CliConfig& c, std::size_t n) {
  if (!c.source_dataset.empty() && fs::is_directory(c.source_dataset)) {
    auto names = scan_dataset(c.source_dataset).class_names;
    if (names.size() == n) return names;
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(std::to_string(i));
  return names;
}

int cmd_synth(const CliConfig& c, std::ostream& out) {
  SynthSpec spec = c.synth.spec();
  DatasetManifest m = generate_synthetic(spec, c.output);
  out << "wrote " << m.train.size() << " train, " << m.validation.size() << " validation, " << m.test.size()
      << " test utterances to " << c.output << '\n';
  return 0;
}

int cmd_pretrain(const CliConfig& c, std::ostream& out) {
  require_dir(c.source_dataset, "source_dataset");
  TargetData source = load_prepared(c.source_dataset, c.train.mel);
  const fs::path ckpt = c.checkpoint.empty() ? fs::path(c.output) / "pretrained.arsc" : fs::path(c.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  PretrainResult r = pretrain_source(c.train, source, ckpt);
  json report = {{"checkpoint", ckpt.string()},
                 {"parameters", r.model.params.count()},
                 {"train_accuracy", r.train_accuracy},
                 {"validation_accuracy", r.validation_accuracy},
                 {"loss_curve", r.loss_curve},
                 {"validation_curve", r.validation_curve}};
  write_text(fs::path(c.output) / "pretrain.json", report.dump(2) + "\n");
  out << "pretrained " << r.model.params.count() << " parameters; train accuracy " << r.train_accuracy
      << ", validation accuracy " << r.validation_accuracy << "; checkpoint " << ckpt.string() << '\n';
  return 0;
}

int cmd_map_labels(const CliConfig& c, std::ostream& out) {
  require_file(c.checkpoint, "checkpoint");
  require_dir(c.dataset, "dataset");
  if (c.train.mapping == MappingKind::Similarity) require_dir(c.source_dataset, "source_dataset");
  AcousticModel model = load_pretrained(c.checkpoint, c.train.model);
  TargetData target = load_prepared(c.dataset, c.train.mel);
  if (c.train.per_class_limit > 0) {
    target.train = subset(target.train, limit_indices(target.train.labels, target.train.num_classes(),
                                                      c.train.per_class_limit, derive_seed(c.train.seed, 1)));
  }
  const auto sources = source_names(c, model.config.num_classes);
  const auto& targets = target.train.class_names;
  LabelMapping mapping;
  std::mt19937_64 rng(derive_seed(c.train.seed, 3));
  if (c.train.mapping == MappingKind::Similarity) {
    auto src = reference_representations(c, model);
    auto tgt = class_representations(model, target.train, c.train.mel);
    SimilarityMatrix sim = cosine_similarity_matrix(tgt, src);
    mapping = build_similarity_mapping(sim, c.train.k);
    write_text(fs::path(c.output) / "similarity.csv", similarity_csv(sim, targets, sources));
  } else if (c.train.mapping == MappingKind::Random) {
    mapping = build_random_mapping(model.config.num_classes, targets.size(), c.train.k, rng);
  } else {
    mapping = build_one_to_one_mapping(model.config.num_classes, targets.size(), rng);
  }
  write_text(fs::path(c.output) / "mapping.json", mapping_to_json(mapping, c.train.mapping, targets, sources).dump(2) + "\n");
  for (std::size_t t = 0; t < mapping.num_targets(); ++t) {
    out << targets[t] << " <-";
    for (int s : mapping.sources[t]) out << ' ' << sources[std::size_t(s)];
    out << '\n';
  }
  return 0;
}

void check_regime_inputs(const CliConfig& c, Regime regime, MappingKind mapping) {
  require_dir(c.dataset, "dataset");
  if (needs_pretrained(regime)) require_file(c.checkpoint, "checkpoint");
  if (uses_reprogram(regime) && mapping == MappingKind::Similarity) require_dir(c.source_dataset, "source_dataset");
}

int cmd_train(const CliConfig& c, std::ostream& out) {
  check_regime_inputs(c, c.train.regime, c.train.mapping);
  std::optional<AcousticModel> pretrained;
  if (needs_pretrained(c.train.regime)) pretrained = load_pretrained(c.checkpoint, c.train.model);
  std::optional<ClassRepresentations> reps;
  if (uses_reprogram(c.train.regime) && c.train.mapping == MappingKind::Similarity) {
    reps = reference_representations(c, *pretrained);
  }
  TargetData data = load_prepared(c.dataset, c.train.mel);
  if (c.train.per_class_limit > 0) {
    data.train = subset(data.train, limit_indices(data.train.labels, data.train.num_classes(),
                                                  c.train.per_class_limit, derive_seed(c.train.seed, 1)));
  }
  TrainResult r = train_regime(c.train, pretrained ? &*pretrained : nullptr, data, reps ? &*reps : nullptr);
  const fs::path dir = c.output;
  fs::create_directories(dir);
  save_checkpoint(r.model.params, dir / "model.arsc");
  json report = {{"regime", to_string(c.train.regime)},
                 {"seed", r.report.seed},
                 {"accuracy", r.report.accuracy},
                 {"loss_curve", r.report.loss_curve},
                 {"trainable_params", r.report.trainable_params},
                 {"model", (dir / "model.arsc").string()}};
  if (r.reprogram) {
    save_checkpoint(r.reprogram->params, dir / "theta.arsc");
    report["theta"] = (dir / "theta.arsc").string();
  }
  if (r.mapping) {
    const auto sources = source_names(c, r.model.config.num_classes);
    json mj = mapping_to_json(*r.mapping, c.train.mapping, data.train.class_names, sources);
    write_text(dir / "mapping.json", mj.dump(2) + "\n");
    report["mapping"] = (dir / "mapping.json").string();
    if (r.similarity) write_text(dir / "similarity.csv", similarity_csv(*r.similarity, data.train.class_names, sources));
  }
  write_text(dir / "run.json", report.dump(2) + "\n");
  out << to_string(c.train.regime) << " accuracy " << r.report.accuracy << " (" << r.report.trainable_params
      << " trainable parameters)\n";
  return 0;
}

int cmd_evaluate(const CliConfig& c, const Overrides& o, std::ostream& out) {
  require_dir(c.dataset, "dataset");
  const std::string model_path = o.model.empty() ? (fs::path(c.output) / "model.arsc").string() : o.model;
  if (!fs::is_regular_file(model_path)) throw Error("model checkpoint '" + model_path + "' does not exist");
  AcousticModel model = load_pretrained(model_path, c.train.model);
  std::optional<ReprogramLayer> layer;
  if (!o.theta.empty()) {
    layer.emplace();
    layer->params = load_checkpoint(o.theta);
    layer->mode = c.train.reprogram_mode;
    layer->domain = c.train.reprogram_domain;
    if (layer->mode == ReprogramMode::PadMask) {
      layer->mask = pad_mask(c.train.target_samples, layer->theta().tensor.size());
    }
  }
  std::optional<LabelMapping> mapping;
  if (!o.mapping.empty()) {
    std::ifstream in(o.mapping);
    if (!in) throw Error("cannot open mapping file '" + o.mapping + "'");
    mapping = mapping_from_json(json::parse(in));
  }
  TargetData data = load_prepared(c.dataset, c.train.mel);
  const double acc = evaluate(model, layer ? &*layer : nullptr, mapping ? &*mapping : nullptr, data.test, c.train.mel);
  write_text(fs::path(c.output) / "evaluate.json",
             json{{"accuracy", acc}, {"test_size", data.test.size()}}.dump(2) + "\n");
  out << "accuracy " << acc << " on " << data.test.size() << " test utterances\n";
  return 0;
}

int cmd_experiment(const CliConfig& c, std::ostream& out) {
  std::vector<SystemSpec> systems = c.systems;
  if (systems.empty()) systems.push_back(SystemSpec{to_string(c.train.regime), c.train.regime, {}, {}});
  for (const auto& s : systems) check_regime_inputs(c, s.regime, s.mapping.value_or(c.train.mapping));

  TargetData data = load_prepared(c.dataset, c.train.mel);
  std::optional<AcousticModel> pretrained;
  std::optional<ClassRepresentations> reps;
  for (const auto& s : systems) {
    if (needs_pretrained(s.regime) && !pretrained) pretrained = load_pretrained(c.checkpoint, c.train.model);
    if (uses_reprogram(s.regime) && s.mapping.value_or(c.train.mapping) == MappingKind::Similarity && !reps) {
      reps = reference_representations(c, *pretrained);
    }
  }

  std::vector<ExperimentReport> reports;
  for (const auto& s : systems) {
    TrainConfig cfg = c.train;
    cfg.regime = s.regime;
    if (s.mapping) cfg.mapping = *s.mapping;
    if (s.augment) cfg.augment = *s.augment;
    const AcousticModel* pre = needs_pretrained(s.regime) ? &*pretrained : nullptr;
    std::cerr << "running " << s.name << " (" << c.runs << " runs)\n";
    reports.push_back(run_experiment(cfg, pre, data, reps ? &*reps : nullptr, c.runs, s.name));
  }
  const ExperimentReport* ref = nullptr;
  for (const auto& r : reports) {
    if (r.system == c.reference) ref = &r;
  }
  if (ref && ref->mean_accuracy > 0) {
    for (auto& r : reports) {
      if (&r == ref) continue;
      r.rel_improvement = rel_improvement(r.mean_accuracy, ref->mean_accuracy);
      r.baseline_system = ref->system;
    }
  }
  write_reports(reports, fs::path(c.output) / "report.json", ReportFormat::Json);
  write_reports(reports, fs::path(c.output) / "report.csv", ReportFormat::Csv);
  out << reports_to_csv(reports);
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message, const std::string& path = "") {
  json j = {{"error", kind}, {"message", one_line(message)}};
  if (!path.empty()) j["path"] = path;
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial reprogramming for low-resource spoken command recognition", "arscr"};
  app.require_subcommand(1);
  Overrides o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "JSON configuration file")->required();
    sub->add_option("--seed", o.seed, "Override the configured seed");
    sub->add_option("--out", o.out, "Override the output directory");
    sub->add_option("--runs", o.runs, "Override the number of runs");
  };
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  auto* pretrain = app.add_subcommand("pretrain", "Train the acoustic model on the source task");
  auto* map_labels = app.add_subcommand("map-labels", "Build a label mapping and similarity matrix");
  auto* train = app.add_subcommand("train", "Train one system on the target task");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a trained system on the target test split");
  auto* experiment = app.add_subcommand("experiment", "Repeated runs with mean, std and relative improvement");
  for (auto* sub : {synth, pretrain, map_labels, train, evaluate_cmd, experiment}) common(sub);
  evaluate_cmd->add_option("--model", o.model, "Model checkpoint (default <output>/model.arsc)");
  evaluate_cmd->add_option("--theta", o.theta, "Reprogram layer checkpoint");
  evaluate_cmd->add_option("--mapping", o.mapping, "Label mapping JSON");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return 2;
  }

  try {
    const CliConfig c = load(o);
    if (synth->parsed()) return cmd_synth(c, out);
    if (pretrain->parsed()) return cmd_pretrain(c, out);
    if (map_labels->parsed()) return cmd_map_labels(c, out);
    if (train->parsed()) return cmd_train(c, out);
    if (evaluate_cmd->parsed()) return cmd_evaluate(c, o, out);
    if (experiment->parsed()) return cmd_experiment(c, out);
  } catch (const ConfigError& e) {
    report_error(err, "config", e.what(), e.path());
    return 1;
  } catch (const WavError& e) {
    report_error(err, "wav", e.what());
    return 1;
  } catch (const CheckpointError& e) {
    report_error(err, "checkpoint", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "runtime", e.what());
    return 1;
  }
  return 1;
}

}  // namespace arscr
