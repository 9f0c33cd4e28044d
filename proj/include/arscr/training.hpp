#pragma once

// Training regimes for the target task:
//   baseline  fresh model, target classes as the output head
//   tl        pretrained model with a new target head, everything trainable
//   ar        pretrained model frozen, only the reprogram layer is trained on
//             the label-mapped loss
//   ar_tl     reprogram layer and pretrained model trained together on the
//             label-mapped loss (the source head is kept)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "arscr/features.hpp"
#include "arscr/label_mapping.hpp"
#include "arscr/model.hpp"
#include "arscr/optim.hpp"
#include "arscr/pipeline.hpp"
#include "arscr/reprogram.hpp"

namespace arscr {

enum class Regime { Baseline, TL, AR, ARTL };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);
bool uses_reprogram(Regime r);
bool needs_pretrained(Regime r);

std::string to_string(ReprogramDomain d);
ReprogramDomain parse_domain(const std::string& s);
std::string to_string(ReprogramMode m);
ReprogramMode parse_mode(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::Baseline;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr_am = 1e-3;
  double lr_theta = 1e-3;
  std::uint64_t seed = 0;
  MappingKind mapping = MappingKind::Similarity;
  std::size_t k = 2;
  ReprogramDomain reprogram_domain = ReprogramDomain::Waveform;
  ReprogramMode reprogram_mode = ReprogramMode::Full;
  /// Pad-mask mode only: target utterances are cut or padded to this many samples.
  std::size_t target_samples = 12000;
  bool augment = false;
  /// 0 keeps every training utterance.
  std::size_t per_class_limit = 0;
  MelConfig mel;
  SpecAugmentConfig spec_augment;
  ModelConfig model;

  void validate() const;
};

struct RunReport {
  std::size_t run_index = 0;
  std::uint64_t seed = 0;
  double accuracy = 0;
  /// Mean training loss of each epoch.
  std::vector<double> loss_curve;
  std::size_t trainable_params = 0;
  bool operator==(const RunReport&) const = default;
};

struct ExperimentReport {
  std::string system;
  std::size_t limit = 0;
  std::vector<RunReport> runs;
  /// Percentages.
  double mean_accuracy = 0;
  double std_accuracy = 0;
  std::optional<double> rel_improvement;
  std::string baseline_system;
  bool operator==(const ExperimentReport&) const = default;

  std::size_t trainable_params() const { return runs.empty() ? 0 : runs.front().trainable_params; }
};

/// Target data after feature extraction.
struct TargetData {
  PreparedSet train;
  PreparedSet validation;
  PreparedSet test;
};

TargetData prepare_target(const AudioSet& train, const AudioSet& validation, const AudioSet& test,
                          const MelConfig& mel);

struct PretrainResult {
  AcousticModel model;
  std::vector<double> loss_curve;
  std::vector<double> validation_curve;
  double train_accuracy = 0;
  double validation_accuracy = 0;
};

/// Cross-entropy training on the source task. Keeps the best-validation
/// parameters when a validation split exists. Saves a checkpoint when
/// `checkpoint` is given.
PretrainResult pretrain_source(const TrainConfig& cfg, const TargetData& source,
                               const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

struct TrainResult {
  AcousticModel model;
  std::optional<ReprogramLayer> reprogram;
  std::optional<LabelMapping> mapping;
  std::optional<SimilarityMatrix> similarity;
  RunReport report;
};

/// Source-class reference representations for similarity mapping.
ClassRepresentations source_representations(const AcousticModel& pretrained, const PreparedSet& source,
                                            const MelConfig& mel);

/// One training run. `pretrained` is required for tl, ar and ar_tl and rejected
/// for baseline. Similarity mapping needs `source_reps`.
TrainResult train_regime(const TrainConfig& cfg, const AcousticModel* pretrained, const TargetData& data,
                         const ClassRepresentations* source_reps = nullptr, std::size_t run_index = 0);

/// Fraction of utterances whose argmax (aggregated through `mapping` when given)
/// matches the label.
double evaluate(const AcousticModel& model, const ReprogramLayer* reprogram, const LabelMapping* mapping,
                const PreparedSet& test, const MelConfig& mel);

/// Argmax accuracy of per-row scores [N, C].
double accuracy_from_scores(const Tensor& scores, const std::vector<int>& labels);

/// Sample mean and standard deviation (n - 1 denominator).
std::pair<double, double> mean_std(const std::vector<double>& values);

/// 100 * (acc - baseline) / baseline.
double rel_improvement(double acc, double baseline_acc);

/// Runs with seeds seed + 0 ... seed + n - 1. Each run draws its own training
/// subset when `per_class_limit` is set.
ExperimentReport run_experiment(const TrainConfig& cfg, const AcousticModel* pretrained, const TargetData& data,
                                const ClassRepresentations* source_reps, std::size_t n_runs,
                                const std::string& system = "");

/// Seed for an independent random stream derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Indices of at most `limit` examples per class, uniform without replacement, ascending.
std::vector<std::size_t> limit_indices(const std::vector<int>& labels, std::size_t num_classes, std::size_t limit,
                                       std::uint64_t seed);

}  // namespace arscr
