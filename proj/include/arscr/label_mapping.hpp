#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "arscr/graph.hpp"
#include "arscr/tensor.hpp"

namespace arscr {

/// Mean embedding per class.
struct ClassRepresentations {
  std::vector<std::string> class_names;
  std::vector<std::vector<double>> vectors;

  std::size_t num_classes() const { return vectors.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

/// Averages `embeddings[i]` per `labels[i]`. Throws naming any class without examples.
ClassRepresentations mean_representations(const std::vector<std::vector<double>>& embeddings,
                                          const std::vector<int>& labels,
                                          const std::vector<std::string>& class_names);

/// Rows are target classes, columns source classes.
struct SimilarityMatrix {
  std::size_t num_targets = 0;
  std::size_t num_sources = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t s) const { return values[t * num_sources + s]; }
  double& at(std::size_t t, std::size_t s) { return values[t * num_sources + s]; }
};

/// Cosine similarity; a zero-norm vector has similarity 0 to everything.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
SimilarityMatrix cosine_similarity_matrix(const ClassRepresentations& targets, const ClassRepresentations& sources);

enum class MappingKind { Similarity, Random, OneToOne };

std::string to_string(MappingKind kind);
MappingKind parse_mapping_kind(const std::string& s);

/// Target class t aggregates source classes `sources[t]` (ascending). Sets are
/// pairwise disjoint and each has exactly `k` entries.
struct LabelMapping {
  std::size_t num_sources = 0;
  std::size_t k = 0;
  std::vector<std::vector<int>> sources;

  std::size_t num_targets() const { return sources.size(); }
  void validate() const;
  bool operator==(const LabelMapping&) const = default;
};

/// Greedy global assignment: repeatedly takes the largest remaining entry whose
/// source is free and whose target still has fewer than k sources. Ties go to
/// the lower source index, then the lower target index.
LabelMapping build_similarity_mapping(const SimilarityMatrix& sim, std::size_t k);

/// Uniformly random disjoint k-subsets.
LabelMapping build_random_mapping(std::size_t num_sources, std::size_t num_targets, std::size_t k,
                                  std::mt19937_64& rng);

/// Random one-to-one mapping (k = 1).
LabelMapping build_one_to_one_mapping(std::size_t num_sources, std::size_t num_targets, std::mt19937_64& rng);

/// [S, T] matrix with 1/k where source s is assigned to target t.
Tensor aggregation_matrix(const LabelMapping& mapping);

/// Source probabilities [S] or [B, S] -> target probabilities [T] or [B, T]:
/// mean over each target's sources, renormalized. If a row puts no mass on any
/// mapped source the result is uniform.
TensorD aggregate_probs(const TensorD& source_probs, const LabelMapping& mapping);

/// Cross-entropy of the aggregated, renormalized target distribution.
/// `logits` is [B, S]; returns a scalar node.
template <typename T>
NodeRef mapped_cross_entropy(BasicGraph<T>& g, NodeRef logits, const LabelMapping& mapping,
                             const std::vector<int>& labels);

/// Unnormalized aggregated probabilities [B, T] (argmax equals that of the
/// renormalized distribution).
template <typename T>
NodeRef mapped_scores(BasicGraph<T>& g, NodeRef logits, const LabelMapping& mapping);

extern template NodeRef mapped_cross_entropy<float>(Graph&, NodeRef, const LabelMapping&, const std::vector<int>&);
extern template NodeRef mapped_cross_entropy<double>(GraphD&, NodeRef, const LabelMapping&, const std::vector<int>&);
extern template NodeRef mapped_scores<float>(Graph&, NodeRef, const LabelMapping&);
extern template NodeRef mapped_scores<double>(GraphD&, NodeRef, const LabelMapping&);

}  // namespace arscr
