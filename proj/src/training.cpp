#include "arscr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "arscr/error.hpp"

namespace arscr {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Baseline: return "baseline";
    case Regime::TL: return "tl";
    case Regime::AR: return "ar";
    case Regime::ARTL: return "ar_tl";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::Baseline;
  if (s == "tl") return Regime::TL;
  if (s == "ar") return Regime::AR;
  if (s == "ar_tl") return Regime::ARTL;
  throw Error("unknown regime '" + s + "' (expected baseline, tl, ar or ar_tl)");
}

bool uses_reprogram(Regime r) { return r == Regime::AR || r == Regime::ARTL; }
bool needs_pretrained(Regime r) { return r != Regime::Baseline; }

std::string to_string(ReprogramDomain d) { return d == ReprogramDomain::Waveform ? "waveform" : "feature"; }

ReprogramDomain parse_domain(const std::string& s) {
  if (s == "waveform") return ReprogramDomain::Waveform;
  if (s == "feature") return ReprogramDomain::Feature;
  throw Error("unknown reprogram domain '" + s + "' (expected waveform or feature)");
}

std::string to_string(ReprogramMode m) { return m == ReprogramMode::Full ? "full" : "pad_mask"; }

ReprogramMode parse_mode(const std::string& s) {
  if (s == "full") return ReprogramMode::Full;
  if (s == "pad_mask") return ReprogramMode::PadMask;
  throw Error("unknown reprogram mode '" + s + "' (expected full or pad_mask)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("epochs must be positive");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (!(lr_am > 0) || !(lr_theta > 0)) throw Error("learning rates must be positive");
  if (k == 0) throw Error("k must be positive");
  if (reprogram_mode == ReprogramMode::PadMask) {
    if (reprogram_domain != ReprogramDomain::Waveform) throw Error("pad_mask reprogramming needs the waveform domain");
    if (target_samples == 0) throw Error("target_samples must be positive");
  }
  mel.validate();
  model.validate();
  if (model.mel_bins != mel.mel_bins) throw Error("model mel_bins must equal mel.mel_bins");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kLimit = 1, kInit, kMapping, kShuffle, kAugment, kTheta };

Tensor batch_mask(std::size_t batch, const SpecAugmentConfig& cfg, std::mt19937_64& rng, const Shape& feature_shape) {
  Shape shape{batch};
  shape.insert(shape.end(), feature_shape.begin(), feature_shape.end());
  Tensor mask(shape);
  const std::size_t per = shape_size(feature_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor m = spec_augment_mask(feature_shape[0], feature_shape[1], cfg, rng);
    std::copy(m.data().begin(), m.data().end(), mask.ptr() + b * per);
  }
  return mask;
}

AdamState adam(double lr) {
  AdamState s;
  s.config.lr = lr;
  return s;
}

struct Trainable {
  ParamStore* store;
  AdamState state;
};

// Shared epoch loop. `loss_fn` builds the loss for one batch.
struct LoopResult {
  std::vector<double> loss_curve;
  std::vector<double> validation_curve;
};

template <typename LossFn, typename ValidateFn, typename SnapshotFn>
LoopResult train_loop(const TrainConfig& cfg, std::size_t n, std::vector<Trainable>& trainables, LossFn loss_fn,
                      ValidateFn validate_fn, SnapshotFn snapshot_fn, std::uint64_t seed) {
  LoopResult r;
  std::mt19937_64 shuffle_rng(derive_seed(seed, kShuffle));
  std::mt19937_64 augment_rng(derive_seed(seed, kAugment));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best = -1;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(start),
                                   order.begin() + std::ptrdiff_t(std::min(n, start + cfg.batch_size)));
      Graph g;
      NodeRef loss = loss_fn(g, idx, augment_rng);
      const double value = g.value(loss)[0];
      if (!std::isfinite(value)) throw Error("training diverged: non-finite loss");
      total += value * double(idx.size());
      Gradients grads = g.backward(loss);
      for (auto& t : trainables) {
        Gradients own;
        for (auto& [name, grad] : grads) {
          if (t.store->contains(name)) own.emplace(name, std::move(grad));
        }
        adam_step(*t.store, own, t.state);
      }
    }
    r.loss_curve.push_back(total / double(n));
    if (auto acc = validate_fn()) {
      r.validation_curve.push_back(*acc);
      if (*acc > best) {
        best = *acc;
        snapshot_fn();
      }
    }
  }
  return r;
}

Tensor scores_of(const Pipeline& p, const LabelMapping* mapping, const PreparedSet& set) {
  constexpr std::size_t kBatch = 32;
  std::vector<float> all;
  std::size_t classes = 0;
  for (std::size_t start = 0; start < set.size(); start += kBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + kBatch); ++i) idx.push_back(i);
    Graph g;
    NodeRef in = g.constant(p.waveform_input() ? stack(set.audio, idx) : stack(set.mel, idx));
    NodeRef logits = p.forward(g, in).logits;
    const Tensor& s = g.value(mapping ? mapped_scores(g, logits, *mapping) : logits);
    classes = s.dim(1);
    all.insert(all.end(), s.data().begin(), s.data().end());
  }
  return Tensor(Shape{set.size(), classes}, std::move(all));
}

PreparedSet fixed_length(const PreparedSet& set, std::size_t length) {
  PreparedSet out = set;
  for (auto& w : out.audio) w = fix_length(w, length);
  return out;
}

}  // namespace

TargetData prepare_target(const AudioSet& train, const AudioSet& validation, const AudioSet& test,
                          const MelConfig& mel) {
  LogMelExtractor<float> ex(mel);
  return TargetData{prepare(train, ex), prepare(validation, ex), prepare(test, ex)};
}

double accuracy_from_scores(const Tensor& scores, const std::vector<int>& labels) {
  if (labels.empty()) throw Error("evaluate: test set is empty");
  if (scores.rank() != 2 || scores.dim(0) != labels.size()) throw ShapeError("evaluate: scores/labels mismatch");
  const std::size_t c = scores.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float* row = scores.ptr() + i * c;
    if (std::max_element(row, row + c) - row == labels[i]) ++correct;
  }
  return double(correct) / double(labels.size());
}

double evaluate(const AcousticModel& model, const ReprogramLayer* reprogram, const LabelMapping* mapping,
                const PreparedSet& test, const MelConfig& mel) {
  if (test.size() == 0) throw Error("evaluate: test set is empty");
  AcousticModel copy = model;
  std::optional<ReprogramLayer> layer;
  if (reprogram) layer = *reprogram;
  std::optional<LogMelExtractor<float>> ex;
  Pipeline p{&copy.config, &copy.params, layer ? &*layer : nullptr, nullptr};
  PreparedSet data = test;
  if (p.waveform_input()) {
    ex.emplace(mel);
    p.extractor = &*ex;
    if (layer->mode == ReprogramMode::PadMask) {
      data = fixed_length(test, std::size_t(std::count(layer->mask.begin(), layer->mask.end(), 0)));
    }
  }
  if (mapping && mapping->num_sources != copy.config.num_classes) {
    throw Error("evaluate: mapping covers " + std::to_string(mapping->num_sources) + " source classes, model has " +
                std::to_string(copy.config.num_classes));
  }
  return accuracy_from_scores(scores_of(p, mapping, data), data.labels);
}

PretrainResult pretrain_source(const TrainConfig& cfg, const TargetData& source,
                               const std::optional<std::filesystem::path>& checkpoint) {
  if (source.train.size() == 0) throw Error("pretrain: source dataset is empty");
  TrainConfig c = cfg;
  c.model.num_classes = source.train.num_classes();
  c.validate();
  PretrainResult result;
  result.model = init_model(c.model, derive_seed(c.seed, kInit));
  Pipeline p{&result.model.config, &result.model.params, nullptr, nullptr};
  std::vector<Trainable> trainables{{&result.model.params, adam(c.lr_am)}};
  ParamStore best = result.model.params;
  const Shape fshape = source.train.mel.front().shape();
  auto loss_fn = [&](Graph& g, const std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    std::optional<Tensor> mask;
    if (c.augment) mask = batch_mask(idx.size(), c.spec_augment, rng, fshape);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(source.train.labels[i]);
    NodeRef logits = p.forward(g, g.constant(stack(source.train.mel, idx)), mask ? &*mask : nullptr).logits;
    return g.cross_entropy(logits, labels);
  };
  auto validate_fn = [&]() -> std::optional<double> {
    if (source.validation.size() == 0) return std::nullopt;
    return accuracy_from_scores(scores_of(p, nullptr, source.validation), source.validation.labels);
  };
  auto loop = train_loop(c, source.train.size(), trainables, loss_fn, validate_fn,
                         [&] { best = result.model.params; }, c.seed);
  if (!loop.validation_curve.empty()) result.model.params = best;
  result.loss_curve = loop.loss_curve;
  result.validation_curve = loop.validation_curve;
  result.train_accuracy = accuracy_from_scores(scores_of(p, nullptr, source.train), source.train.labels);
  if (source.validation.size() > 0) {
    result.validation_accuracy = accuracy_from_scores(scores_of(p, nullptr, source.validation), source.validation.labels);
  }
  if (checkpoint) save_checkpoint(result.model.params, *checkpoint);
  return result;
}

ClassRepresentations source_representations(const AcousticModel& pretrained, const PreparedSet& source,
                                            const MelConfig& mel) {
  return class_representations(pretrained, source, mel, nullptr);
}

TrainResult train_regime(const TrainConfig& cfg, const AcousticModel* pretrained, const TargetData& data,
                         const ClassRepresentations* source_reps, std::size_t run_index) {
  cfg.validate();
  if (needs_pretrained(cfg.regime) && !pretrained) {
    throw Error("regime '" + to_string(cfg.regime) + "' requires a pretrained checkpoint");
  }
  if (!needs_pretrained(cfg.regime) && pretrained) throw Error("regime 'baseline' must not receive a checkpoint");
  if (data.train.size() == 0) throw Error("train: target training set is empty");
  const std::size_t num_targets = data.train.num_classes();

  TrainResult result;
  result.report.run_index = run_index;
  result.report.seed = cfg.seed;

  if (cfg.regime == Regime::Baseline) {
    ModelConfig mc = cfg.model;
    mc.num_classes = num_targets;
    result.model = init_model(mc, derive_seed(cfg.seed, kInit));
  } else {
    result.model = *pretrained;
    if (cfg.regime == Regime::TL) replace_head(result.model, num_targets, derive_seed(cfg.seed, kInit));
  }

  PreparedSet train = data.train;
  PreparedSet validation = data.validation;
  PreparedSet test = data.test;

  if (uses_reprogram(cfg.regime)) {
    const std::size_t num_sources = result.model.config.num_classes;
    std::mt19937_64 map_rng(derive_seed(cfg.seed, kMapping));
    switch (cfg.mapping) {
      case MappingKind::Similarity: {
        if (!source_reps) throw Error("similarity mapping needs source class representations");
        auto target_reps = class_representations(result.model, train, cfg.mel, nullptr);
        result.similarity = cosine_similarity_matrix(target_reps, *source_reps);
        result.mapping = build_similarity_mapping(*result.similarity, cfg.k);
        break;
      }
      case MappingKind::Random: result.mapping = build_random_mapping(num_sources, num_targets, cfg.k, map_rng); break;
      case MappingKind::OneToOne: result.mapping = build_one_to_one_mapping(num_sources, num_targets, map_rng); break;
    }
    if (cfg.reprogram_mode == ReprogramMode::PadMask) {
      const std::size_t source_len = train.audio.front().samples.size();
      result.reprogram = make_pad_layer(cfg.target_samples, source_len, 0.0, derive_seed(cfg.seed, kTheta));
      train = fixed_length(train, cfg.target_samples);
      validation = fixed_length(validation, cfg.target_samples);
    } else if (cfg.reprogram_domain == ReprogramDomain::Waveform) {
      result.reprogram = make_full_layer(Shape{train.audio.front().samples.size()}, ReprogramDomain::Waveform, 0.0,
                                         derive_seed(cfg.seed, kTheta));
    } else {
      result.reprogram = make_full_layer(train.mel.front().shape(), ReprogramDomain::Feature, 0.0,
                                         derive_seed(cfg.seed, kTheta));
    }
  }

  if (cfg.regime == Regime::AR) {
    result.model.params.set_trainable(false);
  }

  std::optional<LogMelExtractor<float>> ex;
  Pipeline p{&result.model.config, &result.model.params, result.reprogram ? &*result.reprogram : nullptr, nullptr};
  if (p.waveform_input()) {
    ex.emplace(cfg.mel);
    p.extractor = &*ex;
  }

  std::vector<Trainable> trainables;
  if (cfg.regime != Regime::AR) trainables.push_back({&result.model.params, adam(cfg.lr_am)});
  if (result.reprogram) trainables.push_back({&result.reprogram->params, adam(cfg.lr_theta)});
  for (const auto& t : trainables) result.report.trainable_params += t.store->count(true);

  const LabelMapping* mapping = result.mapping ? &*result.mapping : nullptr;
  Shape fshape = train.mel.front().shape();
  if (p.waveform_input()) fshape = Shape{cfg.mel.num_frames(train.audio.front().samples.size()), cfg.mel.mel_bins};

  auto loss_fn = [&](Graph& g, const std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    std::optional<Tensor> mask;
    if (cfg.augment) mask = batch_mask(idx.size(), cfg.spec_augment, rng, fshape);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(train.labels[i]);
    NodeRef in = g.constant(p.waveform_input() ? stack(train.audio, idx) : stack(train.mel, idx));
    NodeRef logits = p.forward(g, in, mask ? &*mask : nullptr).logits;
    return mapping ? mapped_cross_entropy(g, logits, *mapping, labels) : g.cross_entropy(logits, labels);
  };
  ParamStore best_am = result.model.params;
  std::optional<ParamStore> best_theta;
  if (result.reprogram) best_theta = result.reprogram->params;
  auto validate_fn = [&]() -> std::optional<double> {
    if (validation.size() == 0) return std::nullopt;
    return accuracy_from_scores(scores_of(p, mapping, validation), validation.labels);
  };
  auto snapshot = [&] {
    best_am = result.model.params;
    if (result.reprogram) best_theta = result.reprogram->params;
  };
  auto loop = train_loop(cfg, train.size(), trainables, loss_fn, validate_fn, snapshot, cfg.seed);
  if (!loop.validation_curve.empty()) {
    result.model.params = best_am;
    if (result.reprogram) result.reprogram->params = *best_theta;
  }
  result.report.loss_curve = loop.loss_curve;
  result.report.accuracy = evaluate(result.model, result.reprogram ? &*result.reprogram : nullptr, mapping, test, cfg.mel);
  return result;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.size() < 2) throw Error("mean_std needs at least two values");
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

double rel_improvement(double acc, double baseline_acc) {
  if (!(baseline_acc > 0)) throw Error("relative improvement needs a positive baseline accuracy");
  return 100.0 * (acc - baseline_acc) / baseline_acc;
}

std::vector<std::size_t> limit_indices(const std::vector<int>& labels, std::size_t num_classes, std::size_t limit,
                                       std::uint64_t seed) {
  if (limit == 0) throw Error("per-class limit must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(std::size_t(labels[i])).push_back(i);
  std::vector<std::size_t> keep;
  for (auto& idx : by_class) {
    if (idx.size() > limit) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(limit);
    }
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

ExperimentReport run_experiment(const TrainConfig& cfg, const AcousticModel* pretrained, const TargetData& data,
                                const ClassRepresentations* source_reps, std::size_t n_runs,
                                const std::string& system) {
  if (n_runs < 2) throw Error("an experiment needs at least two runs");
  ExperimentReport report;
  report.system = system.empty() ? to_string(cfg.regime) : system;
  report.limit = cfg.per_class_limit;
  std::vector<double> accs;
  for (std::size_t i = 0; i < n_runs; ++i) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + i;
    TargetData run_data = data;
    if (cfg.per_class_limit > 0) {
      run_data.train = subset(data.train, limit_indices(data.train.labels, data.train.num_classes(),
                                                        cfg.per_class_limit, derive_seed(run_cfg.seed, kLimit)));
    }
    auto r = train_regime(run_cfg, pretrained, run_data, source_reps, i);
    accs.push_back(100.0 * r.report.accuracy);
    report.runs.push_back(std::move(r.report));
  }
  std::tie(report.mean_accuracy, report.std_accuracy) = mean_std(accs);
  return report;
}

}  // namespace arscr
