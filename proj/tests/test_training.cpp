#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "arscr/dataset.hpp"
#include "arscr/error.hpp"
#include "arscr/training.hpp"

using namespace arscr;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.conv1_channels = 6;
  m.conv2_channels = 6;
  m.hidden = 6;
  m.attention_dim = 6;
  m.num_classes = 4;
  m.input_shift = -2.5;
  return m;
}

SynthSpec tiny_source(std::size_t length) {
  SynthSpec s;
  s.classes = {{"a", 400, 0, Envelope::Hann, 0.3},
               {"b", 900, 300, Envelope::Decay, 0.3},
               {"c", 1800, 0, Envelope::Flat, 0.5},
               {"d", 3000, -400, Envelope::Hann, 0.2}};
  s.noise = 0.05;
  s.length = length;
  s.train_per_class = 6;
  s.validation_per_class = 2;
  s.test_per_class = 4;
  s.seed = 11;
  return s;
}

TargetData prepared(const SynthSpec& s, const MelConfig& mel) {
  SynthData d = synthesize(s);
  return prepare_target(d.train, d.validation, d.test, mel);
}

TrainConfig tiny_config(Regime r) {
  TrainConfig c;
  c.regime = r;
  c.epochs = 3;
  c.batch_size = 4;
  c.model = tiny_model();
  c.seed = 5;
  return c;
}

struct Fixture {
  TargetData source;
  TargetData target;
  AcousticModel pretrained;
  ClassRepresentations reps;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    MelConfig mel;
    SynthSpec src = tiny_source(4000);
    x.source = prepared(src, mel);
    x.target = prepared(derived_target_spec(src, {2, 0}, 0.05, 3), mel);
    TrainConfig c = tiny_config(Regime::Baseline);
    c.epochs = 4;
    x.pretrained = pretrain_source(c, x.source).model;
    x.reps = source_representations(x.pretrained, x.source.train, mel);
    return x;
  }();
  return f;
}

}  // namespace

TEST(Metrics, RelativeImprovementExamples) {
  EXPECT_NEAR(rel_improvement(82.3, 64.0), 28.59375, 1e-9);
  EXPECT_NEAR(rel_improvement(88.6, 70.3), 26.03129, 1e-4);
  EXPECT_DOUBLE_EQ(rel_improvement(50, 50), 0.0);
  EXPECT_LT(rel_improvement(40, 50), 0.0);
  EXPECT_THROW(rel_improvement(10, 0), Error);
}

TEST(Metrics, SampleMeanAndStd) {
  auto [m, s] = mean_std({2, 4});
  EXPECT_DOUBLE_EQ(m, 3.0);
  EXPECT_NEAR(s, std::sqrt(2.0), 1e-12);
  auto [m2, s2] = mean_std({5, 5, 5});
  EXPECT_DOUBLE_EQ(m2, 5.0);
  EXPECT_DOUBLE_EQ(s2, 0.0);
  EXPECT_THROW(mean_std({1}), Error);
}

TEST(Metrics, AccuracyFromScores) {
  Tensor scores({4, 3}, std::vector<float>{0.9f, 0.1f, 0, 0, 1, 0, 0.2f, 0.1f, 0.7f, 0.5f, 0.4f, 0.1f});
  EXPECT_DOUBLE_EQ(accuracy_from_scores(scores, {0, 1, 2, 1}), 0.75);
  EXPECT_THROW(accuracy_from_scores(scores, {0, 1}), ShapeError);
  EXPECT_DOUBLE_EQ(accuracy_from_scores(scores, {0, 1, 2, 0}), 1.0);
  Tensor constant({6, 3}, 0.0f);
  for (std::size_t i = 0; i < 6; ++i) constant.at(i, 1) = 1.0f;
  EXPECT_DOUBLE_EQ(accuracy_from_scores(constant, {0, 1, 2, 0, 1, 2}), 1.0 / 3.0);
}

TEST(Regimes, NamesRoundTrip) {
  for (Regime r : {Regime::Baseline, Regime::TL, Regime::AR, Regime::ARTL}) EXPECT_EQ(parse_regime(to_string(r)), r);
  EXPECT_EQ(to_string(Regime::ARTL), "ar_tl");
  EXPECT_THROW(parse_regime("fine_tune"), Error);
  EXPECT_TRUE(uses_reprogram(Regime::AR));
  EXPECT_FALSE(uses_reprogram(Regime::TL));
  EXPECT_FALSE(needs_pretrained(Regime::Baseline));
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.reprogram_mode = ReprogramMode::PadMask;
  c.reprogram_domain = ReprogramDomain::Feature;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.model.mel_bins = 20;
  EXPECT_THROW(c.validate(), Error);
}

TEST(LimitIndices, PerClassAndSorted) {
  std::vector<int> labels{0, 1, 0, 1, 0, 1, 0};
  auto idx = limit_indices(labels, 2, 2, 9);
  ASSERT_EQ(idx.size(), 4u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(idx, limit_indices(labels, 2, 2, 9));
  EXPECT_EQ(limit_indices(labels, 2, 10, 9).size(), labels.size());
  EXPECT_THROW(limit_indices(labels, 2, 0, 9), Error);
}

TEST(TrainRegime, CheckpointRequirements) {
  const auto& f = fixture();
  EXPECT_THROW(train_regime(tiny_config(Regime::TL), nullptr, f.target), Error);
  EXPECT_THROW(train_regime(tiny_config(Regime::AR), nullptr, f.target, &f.reps), Error);
  EXPECT_THROW(train_regime(tiny_config(Regime::Baseline), &f.pretrained, f.target), Error);
  EXPECT_THROW(train_regime(tiny_config(Regime::AR), &f.pretrained, f.target, nullptr), Error);
}

TEST(TrainRegime, ArLeavesModelBitIdentical) {
  const auto& f = fixture();
  TrainConfig c = tiny_config(Regime::AR);
  TrainResult r = train_regime(c, &f.pretrained, f.target, &f.reps);
  ASSERT_TRUE(r.reprogram.has_value());
  EXPECT_EQ(r.report.trainable_params, 4000u);
  for (const auto& [name, p] : f.pretrained.params) {
    EXPECT_TRUE(r.model.params.get(name).tensor.identical(p.tensor)) << name;
    EXPECT_FALSE(r.model.params.get(name).trainable) << name;
  }
  bool moved = false;
  for (float v : r.reprogram->theta().tensor.data()) moved |= v != 0.0f;
  EXPECT_TRUE(moved);
}

TEST(TrainRegime, ArOnOneSecondAudioTrainsExactly16000) {
  MelConfig mel;
  SynthSpec src = tiny_source(16000);
  src.train_per_class = 2;
  src.validation_per_class = 0;
  src.test_per_class = 1;
  TargetData source = prepared(src, mel);
  TrainConfig pc = tiny_config(Regime::Baseline);
  pc.epochs = 1;
  AcousticModel pre = pretrain_source(pc, source).model;
  TrainConfig c = tiny_config(Regime::AR);
  c.epochs = 1;
  c.mapping = MappingKind::Random;
  TargetData target = prepared(derived_target_spec(src, {1, 3}, 0.05, 1), mel);
  TrainResult r = train_regime(c, &pre, target);
  EXPECT_EQ(r.report.trainable_params, 16000u);
  EXPECT_EQ(r.reprogram->num_trainable(), 16000u);
}

TEST(TrainRegime, TrainableCountsPerRegime) {
  const auto& f = fixture();
  const std::size_t am = f.pretrained.params.count();
  TrainResult tl = train_regime(tiny_config(Regime::TL), &f.pretrained, f.target);
  // The new head has 2 rows instead of 4.
  const std::size_t head_delta = 2 * (2 * tiny_model().hidden + 1);
  EXPECT_EQ(tl.report.trainable_params, am - head_delta);
  TrainResult artl = train_regime(tiny_config(Regime::ARTL), &f.pretrained, f.target, &f.reps);
  EXPECT_EQ(artl.report.trainable_params, am + 4000);
}

TEST(TrainRegime, LossDecreasesInEveryRegime) {
  const auto& f = fixture();
  for (Regime reg : {Regime::Baseline, Regime::TL, Regime::AR, Regime::ARTL}) {
    TrainConfig c = tiny_config(reg);
    c.epochs = 6;
    const AcousticModel* pre = reg == Regime::Baseline ? nullptr : &f.pretrained;
    TrainResult r = train_regime(c, pre, f.target, &f.reps);
    ASSERT_EQ(r.report.loss_curve.size(), 6u);
    EXPECT_LT(r.report.loss_curve.back(), r.report.loss_curve.front()) << to_string(reg);
  }
}

TEST(TrainRegime, SameSeedSameResult) {
  const auto& f = fixture();
  for (Regime reg : {Regime::Baseline, Regime::ARTL}) {
    TrainConfig c = tiny_config(reg);
    c.augment = true;
    const AcousticModel* pre = reg == Regime::Baseline ? nullptr : &f.pretrained;
    TrainResult a = train_regime(c, pre, f.target, &f.reps);
    TrainResult b = train_regime(c, pre, f.target, &f.reps);
    EXPECT_EQ(a.report, b.report);
    EXPECT_TRUE(a.model.params.identical(b.model.params));
  }
}

TEST(TrainRegime, FeatureDomainAndPadMask) {
  const auto& f = fixture();
  TrainConfig c = tiny_config(Regime::AR);
  c.reprogram_domain = ReprogramDomain::Feature;
  TrainResult r = train_regime(c, &f.pretrained, f.target, &f.reps);
  EXPECT_EQ(r.report.trainable_params, f.target.train.mel.front().size());
  c.reprogram_domain = ReprogramDomain::Waveform;
  c.reprogram_mode = ReprogramMode::PadMask;
  c.target_samples = 3000;
  TrainResult p = train_regime(c, &f.pretrained, f.target, &f.reps);
  EXPECT_EQ(p.report.trainable_params, 4000u);
  const auto& theta = p.reprogram->theta().tensor;
  for (std::size_t i = 0; i < 3000; ++i) ASSERT_EQ(theta[i], 0.0f);
}

TEST(TrainRegime, MappingsFollowTheConfig) {
  const auto& f = fixture();
  TrainConfig c = tiny_config(Regime::AR);
  c.k = 1;
  c.mapping = MappingKind::OneToOne;
  TrainResult r = train_regime(c, &f.pretrained, f.target);
  ASSERT_TRUE(r.mapping);
  EXPECT_EQ(r.mapping->k, 1u);
  EXPECT_FALSE(r.similarity);
  c.mapping = MappingKind::Similarity;
  c.k = 2;
  TrainResult s = train_regime(c, &f.pretrained, f.target, &f.reps);
  ASSERT_TRUE(s.similarity);
  EXPECT_EQ(s.similarity->num_targets, 2u);
  EXPECT_EQ(s.similarity->num_sources, 4u);
  EXPECT_EQ(s.mapping->sources[0].size(), 2u);
}

TEST(Experiment, SeedsLimitsAndStatistics) {
  const auto& f = fixture();
  TrainConfig c = tiny_config(Regime::Baseline);
  c.epochs = 1;
  c.per_class_limit = 3;
  ExperimentReport r = run_experiment(c, nullptr, f.target, nullptr, 3, "base");
  ASSERT_EQ(r.runs.size(), 3u);
  EXPECT_EQ(r.system, "base");
  EXPECT_EQ(r.limit, 3u);
  std::vector<double> accs;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.runs[i].seed, c.seed + i);
    EXPECT_EQ(r.runs[i].run_index, i);
    accs.push_back(100 * r.runs[i].accuracy);
  }
  auto [m, s] = mean_std(accs);
  EXPECT_DOUBLE_EQ(r.mean_accuracy, m);
  EXPECT_DOUBLE_EQ(r.std_accuracy, s);
  EXPECT_EQ(run_experiment(c, nullptr, f.target, nullptr, 3, "base"), r);
  EXPECT_THROW(run_experiment(c, nullptr, f.target, nullptr, 1), Error);
}

TEST(Evaluate, MappingSizeMustMatchModel) {
  const auto& f = fixture();
  std::mt19937_64 rng(1);
  LabelMapping m = build_one_to_one_mapping(5, 2, rng);
  EXPECT_THROW(evaluate(f.pretrained, nullptr, &m, f.target.test, MelConfig{}), Error);
  PreparedSet empty;
  EXPECT_THROW(evaluate(f.pretrained, nullptr, nullptr, empty, MelConfig{}), Error);
}

TEST(Pretrain, SameSeedSameCheckpointAndPerEpochValidation) {
  const auto& f = fixture();
  TrainConfig c = tiny_config(Regime::Baseline);
  PretrainResult a = pretrain_source(c, f.source);
  PretrainResult b = pretrain_source(c, f.source);
  EXPECT_EQ(serialize_checkpoint(a.model.params), serialize_checkpoint(b.model.params));
  EXPECT_EQ(a.loss_curve.size(), c.epochs);
  EXPECT_EQ(a.validation_curve.size(), c.epochs);
  EXPECT_DOUBLE_EQ(a.validation_accuracy, *std::max_element(a.validation_curve.begin(), a.validation_curve.end()));
  TargetData empty;
  EXPECT_THROW(pretrain_source(c, empty), Error);
}

// Desk-scale sanity run with the default model: 6 classes, 200 utterances each.
TEST(Pretrain, DefaultModelFitsTheSyntheticSourceTask) {
  MelConfig mel;
  SynthSpec s = default_source_spec(3);
  s.train_per_class = 200;
  s.validation_per_class = 0;
  s.test_per_class = 0;
  TargetData source = prepared(s, mel);
  TrainConfig c;
  c.epochs = 30;
  PretrainResult r = pretrain_source(c, source);
  EXPECT_GE(r.train_accuracy, 0.95);
}

TEST(Experiment, BaselineBeatsChanceWithThreeExamplesPerClass) {
  MelConfig mel;
  TargetData target = prepared(default_target_spec(8), mel);
  TrainConfig c;
  c.per_class_limit = 3;
  c.seed = 40;
  ExperimentReport r = run_experiment(c, nullptr, target, nullptr, 10);
  std::size_t above = 0;
  for (const auto& run : r.runs) above += run.accuracy > 1.0 / 3.0;
  EXPECT_GT(above, 5u) << "mean " << r.mean_accuracy;
}
