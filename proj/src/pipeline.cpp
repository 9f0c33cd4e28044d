#include "arscr/pipeline.hpp"

#include <algorithm>

#include "arscr/error.hpp"

namespace arscr {

template <typename T>
AmOutput BasicPipeline<T>::forward(BasicGraph<T>& g, NodeRef input, const BasicTensor<T>* mask) const {
  if (!model_config || !am) throw Error("pipeline: acoustic model not set");
  NodeRef x = input;
  if (waveform_input()) {
    if (!extractor) throw Error("pipeline: waveform input needs a log-mel extractor");
    x = (*extractor)(g, apply_reprogram(g, *reprogram, x));
  } else if (reprogram) {
    x = apply_reprogram(g, *reprogram, x);
  }
  if (mask) {
    if (mask->shape() != g.shape(x)) {
      throw ShapeError("pipeline: augmentation mask " + shape_str(mask->shape()) + " vs features " +
                       shape_str(g.shape(x)));
    }
    x = g.mul(x, g.constant(*mask));
  }
  return forward_am(g, *model_config, *am, x);
}

template struct BasicPipeline<float>;
template struct BasicPipeline<double>;

namespace {

template <typename Get>
Tensor stack_rows(std::size_t count, const Shape& item_shape, Get get) {
  Shape shape{count};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  Tensor out(shape);
  const std::size_t per = shape_size(item_shape);
  for (std::size_t i = 0; i < count; ++i) {
    auto src = get(i);
    if (src.size() != per) throw ShapeError("stack: items differ in shape");
    std::copy(src.begin(), src.end(), out.ptr() + i * per);
  }
  return out;
}

}  // namespace

Tensor stack(const std::vector<Tensor>& items, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error("stack: empty batch");
  const Shape& s = items.at(indices[0]).shape();
  return stack_rows(indices.size(), s, [&](std::size_t i) {
    const Tensor& t = items.at(indices[i]);
    if (t.shape() != s) throw ShapeError("stack: " + shape_str(t.shape()) + " vs " + shape_str(s));
    return t.data();
  });
}

Tensor stack(const std::vector<Waveform>& items, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error("stack: empty batch");
  const Shape s{items.at(indices[0]).samples.size()};
  return stack_rows(indices.size(), s, [&](std::size_t i) { return std::span<const float>(items.at(indices[i]).samples); });
}

PreparedSet prepare(const AudioSet& set, const LogMelExtractor<float>& extractor) {
  PreparedSet p;
  p.class_names = set.class_names;
  p.audio = set.audio;
  p.labels = set.labels;
  if (!set.audio.empty()) p.mel = log_mel_batch(set.audio, extractor);
  return p;
}

PreparedSet subset(const PreparedSet& set, const std::vector<std::size_t>& indices) {
  PreparedSet p;
  p.class_names = set.class_names;
  for (auto i : indices) {
    p.audio.push_back(set.audio.at(i));
    p.mel.push_back(set.mel.at(i));
    p.labels.push_back(set.labels.at(i));
  }
  return p;
}

std::vector<std::vector<double>> embeddings(const Pipeline& pipeline, const PreparedSet& set) {
  constexpr std::size_t kBatch = 32;
  std::vector<std::vector<double>> out;
  out.reserve(set.size());
  for (std::size_t start = 0; start < set.size(); start += kBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + kBatch); ++i) idx.push_back(i);
    Graph g;
    NodeRef in = g.constant(pipeline.waveform_input() ? stack(set.audio, idx) : stack(set.mel, idx));
    const Tensor& e = g.value(pipeline.forward(g, in).embedding);
    const std::size_t d = e.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) out.emplace_back(e.ptr() + b * d, e.ptr() + (b + 1) * d);
  }
  return out;
}

ClassRepresentations class_representations(const AcousticModel& model, const PreparedSet& set, const MelConfig& mel,
                                           const ReprogramLayer* reprogram) {
  if (set.size() == 0) throw Error("class_representations: dataset is empty");
  AcousticModel copy = model;
  std::optional<ReprogramLayer> layer;
  if (reprogram) layer = *reprogram;
  std::optional<LogMelExtractor<float>> extractor;
  Pipeline p{&copy.config, &copy.params, layer ? &*layer : nullptr, nullptr};
  if (p.waveform_input()) {
    extractor.emplace(mel);
    p.extractor = &*extractor;
  }
  return mean_representations(embeddings(p, set), set.labels, set.class_names);
}

}  // namespace arscr
