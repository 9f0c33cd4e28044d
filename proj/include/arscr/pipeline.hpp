#pragma once

// Target-side forward pass: optional reprogram layer, log-mel front end and
// acoustic model. Waveform-domain reprogramming needs raw audio at the input;
// every other configuration starts from precomputed log-mel features.

#include <vector>

#include "arscr/dataset.hpp"
#include "arscr/features.hpp"
#include "arscr/label_mapping.hpp"
#include "arscr/model.hpp"
#include "arscr/reprogram.hpp"

namespace arscr {

template <typename T>
struct BasicPipeline {
  const ModelConfig* model_config = nullptr;
  BasicParamStore<T>* am = nullptr;
  BasicReprogramLayer<T>* reprogram = nullptr;
  const LogMelExtractor<T>* extractor = nullptr;

  bool waveform_input() const { return reprogram && reprogram->domain == ReprogramDomain::Waveform; }

  /// `input` is [B, L] audio when `waveform_input()`, else [B, T, F] log-mel.
  /// `mask` ([B, T, F], 0/1) multiplies the features entering the model.
  AmOutput forward(BasicGraph<T>& g, NodeRef input, const BasicTensor<T>* mask = nullptr) const;
};

using Pipeline = BasicPipeline<float>;

extern template struct BasicPipeline<float>;
extern template struct BasicPipeline<double>;

/// Row-stacks equally shaped tensors picked by `indices` into [B, ...].
Tensor stack(const std::vector<Tensor>& items, const std::vector<std::size_t>& indices);
/// Row-stacks waveforms into [B, L].
Tensor stack(const std::vector<Waveform>& items, const std::vector<std::size_t>& indices);

/// Utterances with their log-mel features computed once.
struct PreparedSet {
  std::vector<std::string> class_names;
  std::vector<Waveform> audio;
  std::vector<Tensor> mel;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
};

PreparedSet prepare(const AudioSet& set, const LogMelExtractor<float>& extractor);
PreparedSet subset(const PreparedSet& set, const std::vector<std::size_t>& indices);

/// Pooled embeddings of every utterance, batched, without gradients.
std::vector<std::vector<double>> embeddings(const Pipeline& pipeline, const PreparedSet& set);

/// Mean embedding per class. Target data passes through `reprogram` when given.
ClassRepresentations class_representations(const AcousticModel& model, const PreparedSet& set,
                                           const MelConfig& mel, const ReprogramLayer* reprogram = nullptr);

}  // namespace arscr
