#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "arscr/graph.hpp"
#include "arscr/params.hpp"

namespace arscr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update of every trainable parameter that has a
/// gradient. Frozen parameters are never touched.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state);

/// Max over checked entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// with numeric gradients from central differences.
struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
};

/// Builds the loss once, then perturbs parameter entries in place. With `sample`
/// set, that many entries are drawn uniformly (seeded) from all trainable entries;
/// otherwise every entry is checked.
template <typename T>
GradCheckResult grad_check(const std::function<NodeRef(BasicGraph<T>&)>& build_loss, BasicParamStore<T>& params,
                           double epsilon, std::optional<std::size_t> sample = std::nullopt, std::uint64_t seed = 0);

extern template GradCheckResult grad_check<float>(const std::function<NodeRef(Graph&)>&, ParamStore&, double,
                                                  std::optional<std::size_t>, std::uint64_t);
extern template GradCheckResult grad_check<double>(const std::function<NodeRef(GraphD&)>&, BasicParamStore<double>&,
                                                   double, std::optional<std::size_t>, std::uint64_t);

}  // namespace arscr
