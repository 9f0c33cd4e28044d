#include "arscr/label_mapping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "arscr/error.hpp"

namespace arscr {

ClassRepresentations mean_representations(const std::vector<std::vector<double>>& embeddings,
                                          const std::vector<int>& labels,
                                          const std::vector<std::string>& class_names) {
  if (embeddings.size() != labels.size()) throw Error("mean_representations: embeddings and labels differ in length");
  const std::size_t n = class_names.size();
  ClassRepresentations reps;
  reps.class_names = class_names;
  reps.vectors.assign(n, {});
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= n) throw Error("mean_representations: label out of range");
    auto& acc = reps.vectors[std::size_t(labels[i])];
    if (acc.empty()) acc.assign(embeddings[i].size(), 0.0);
    if (acc.size() != embeddings[i].size()) throw ShapeError("mean_representations: embedding dimensions differ");
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += embeddings[i][d];
    ++counts[std::size_t(labels[i])];
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (counts[c] == 0) throw Error("class '" + class_names[c] + "' has no examples");
    for (auto& v : reps.vectors[c]) v /= double(counts[c]);
  }
  for (const auto& v : reps.vectors) {
    if (v.size() != reps.dim()) throw ShapeError("mean_representations: embedding dimensions differ");
  }
  return reps;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine similarity: dimension " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityMatrix cosine_similarity_matrix(const ClassRepresentations& targets, const ClassRepresentations& sources) {
  if (targets.dim() != sources.dim()) {
    throw ShapeError("similarity: target dimension " + std::to_string(targets.dim()) + " vs source dimension " +
                     std::to_string(sources.dim()));
  }
  SimilarityMatrix sim;
  sim.num_targets = targets.num_classes();
  sim.num_sources = sources.num_classes();
  sim.values.resize(sim.num_targets * sim.num_sources);
  for (std::size_t t = 0; t < sim.num_targets; ++t) {
    for (std::size_t s = 0; s < sim.num_sources; ++s) sim.at(t, s) = cosine_similarity(targets.vectors[t], sources.vectors[s]);
  }
  return sim;
}

std::string to_string(MappingKind kind) {
  switch (kind) {
    case MappingKind::Similarity: return "similarity";
    case MappingKind::Random: return "random";
    case MappingKind::OneToOne: return "one_to_one";
  }
  return "?";
}

MappingKind parse_mapping_kind(const std::string& s) {
  if (s == "similarity") return MappingKind::Similarity;
  if (s == "random") return MappingKind::Random;
  if (s == "one_to_one") return MappingKind::OneToOne;
  throw Error("unknown mapping kind '" + s + "' (expected similarity, random or one_to_one)");
}

void LabelMapping::validate() const {
  if (k == 0) throw Error("label mapping: k must be at least 1");
  std::vector<bool> used(num_sources, false);
  for (std::size_t t = 0; t < sources.size(); ++t) {
    if (sources[t].size() != k) {
      throw Error("label mapping: target " + std::to_string(t) + " has " + std::to_string(sources[t].size()) +
                  " sources, expected " + std::to_string(k));
    }
    for (int s : sources[t]) {
      if (s < 0 || std::size_t(s) >= num_sources) {
        throw Error("label mapping: source " + std::to_string(s) + " out of range");
      }
      if (used[std::size_t(s)]) throw Error("label mapping: source " + std::to_string(s) + " assigned twice");
      used[std::size_t(s)] = true;
    }
  }
}

namespace {

void check_capacity(std::size_t num_sources, std::size_t num_targets, std::size_t k) {
  if (k == 0) throw Error("label mapping: k must be at least 1");
  if (k * num_targets > num_sources) {
    throw Error("label mapping needs " + std::to_string(k * num_targets) + " source classes, only " +
                std::to_string(num_sources) + " available");
  }
}

}  // namespace

LabelMapping build_similarity_mapping(const SimilarityMatrix& sim, std::size_t k) {
  check_capacity(sim.num_sources, sim.num_targets, k);
  std::vector<std::tuple<double, std::size_t, std::size_t>> entries;
  entries.reserve(sim.values.size());
  for (std::size_t t = 0; t < sim.num_targets; ++t) {
    for (std::size_t s = 0; s < sim.num_sources; ++s) {
      if (std::isnan(sim.at(t, s))) throw Error("similarity matrix contains NaN");
      entries.emplace_back(sim.at(t, s), s, t);
    }
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  LabelMapping m{sim.num_sources, k, std::vector<std::vector<int>>(sim.num_targets)};
  std::vector<bool> taken(sim.num_sources, false);
  for (const auto& [value, s, t] : entries) {
    if (taken[s] || m.sources[t].size() >= k) continue;
    taken[s] = true;
    m.sources[t].push_back(int(s));
  }
  for (auto& set : m.sources) std::sort(set.begin(), set.end());
  m.validate();
  return m;
}

LabelMapping build_random_mapping(std::size_t num_sources, std::size_t num_targets, std::size_t k,
                                  std::mt19937_64& rng) {
  check_capacity(num_sources, num_targets, k);
  std::vector<int> order(num_sources);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  LabelMapping m{num_sources, k, std::vector<std::vector<int>>(num_targets)};
  for (std::size_t t = 0; t < num_targets; ++t) {
    m.sources[t].assign(order.begin() + std::ptrdiff_t(t * k), order.begin() + std::ptrdiff_t((t + 1) * k));
    std::sort(m.sources[t].begin(), m.sources[t].end());
  }
  return m;
}

LabelMapping build_one_to_one_mapping(std::size_t num_sources, std::size_t num_targets, std::mt19937_64& rng) {
  return build_random_mapping(num_sources, num_targets, 1, rng);
}

Tensor aggregation_matrix(const LabelMapping& mapping) {
  mapping.validate();
  Tensor a(Shape{mapping.num_sources, mapping.num_targets()});
  for (std::size_t t = 0; t < mapping.num_targets(); ++t) {
    for (int s : mapping.sources[t]) a[std::size_t(s) * mapping.num_targets() + t] = float(1.0 / double(mapping.k));
  }
  return a;
}

TensorD aggregate_probs(const TensorD& source_probs, const LabelMapping& mapping) {
  mapping.validate();
  if (source_probs.rank() < 1 || source_probs.rank() > 2 || source_probs.shape().back() != mapping.num_sources) {
    throw ShapeError("aggregate_probs: probabilities " + shape_str(source_probs.shape()) + " vs " +
                     std::to_string(mapping.num_sources) + " source classes");
  }
  const std::size_t rows = source_probs.rank() == 2 ? source_probs.dim(0) : 1;
  const std::size_t nt = mapping.num_targets();
  Shape out_shape = source_probs.shape();
  out_shape.back() = nt;
  TensorD out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = source_probs.ptr() + r * mapping.num_sources;
    double* q = out.ptr() + r * nt;
    double total = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      double acc = 0;
      for (int s : mapping.sources[t]) {
        if (p[s] < 0) throw Error("aggregate_probs: negative probability");
        acc += p[s];
      }
      q[t] = acc / double(mapping.k);
      total += q[t];
    }
    for (std::size_t t = 0; t < nt; ++t) q[t] = total > 0 ? q[t] / total : 1.0 / double(nt);
  }
  return out;
}

template <typename T>
NodeRef mapped_scores(BasicGraph<T>& g, NodeRef logits, const LabelMapping& mapping) {
  if (g.shape(logits).back() != mapping.num_sources) {
    throw ShapeError("mapped loss: logits " + shape_str(g.shape(logits)) + " vs " +
                     std::to_string(mapping.num_sources) + " source classes");
  }
  return g.matmul(g.softmax(logits), g.constant(aggregation_matrix(mapping).template cast<T>()));
}

template <typename T>
NodeRef mapped_cross_entropy(BasicGraph<T>& g, NodeRef logits, const LabelMapping& mapping,
                             const std::vector<int>& labels) {
  // log-softmax of log(scores) is log of the renormalized scores.
  NodeRef scores = mapped_scores(g, logits, mapping);
  const T tiny = std::is_same_v<T, float> ? T(1e-12) : T(1e-30);
  return g.cross_entropy(g.log(g.add(scores, g.scalar(tiny))), labels);
}

template NodeRef mapped_cross_entropy<float>(Graph&, NodeRef, const LabelMapping&, const std::vector<int>&);
template NodeRef mapped_cross_entropy<double>(GraphD&, NodeRef, const LabelMapping&, const std::vector<int>&);
template NodeRef mapped_scores<float>(Graph&, NodeRef, const LabelMapping&);
template NodeRef mapped_scores<double>(GraphD&, NodeRef, const LabelMapping&);

}  // namespace arscr
