#include "arscr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "arscr/error.hpp"

namespace arscr {

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    const Parameter& p = params.get(name);
    if (p.tensor.shape() != g.shape()) {
      throw ShapeError("adam_step: gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                       ", parameter has " + shape_str(p.tensor.shape()));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double t = double(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, g] : grads) {
    Parameter& p = params.get(name);
    if (!p.trainable) continue;
    auto [mit, _m] = state.m.try_emplace(name, Tensor(p.tensor.shape()));
    auto [vit, _v] = state.v.try_emplace(name, Tensor(p.tensor.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != p.tensor.shape()) throw ShapeError("adam_step: moment shape changed for '" + name + "'");
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = float(mi);
      v[i] = float(vi);
      const double update = c.lr * (mi / correction1) / (std::sqrt(vi / correction2) + c.eps);
      p.tensor[i] = float(double(p.tensor[i]) - update);
    }
  }
}

template <typename T>
GradCheckResult grad_check(const std::function<NodeRef(BasicGraph<T>&)>& build_loss, BasicParamStore<T>& params,
                           double epsilon, std::optional<std::size_t> sample, std::uint64_t seed) {
  if (!(epsilon >= 1e-5 && epsilon <= 1e-2)) throw Error("grad_check epsilon must lie in [1e-5, 1e-2]");
  BasicGraph<T> graph;
  NodeRef loss = build_loss(graph);
  const auto& base = graph.evaluate(loss);
  if (base.size() != 1 || !base.all_finite()) throw Error("grad_check: loss is not a finite scalar");
  auto analytic = graph.backward(loss);

  struct Entry {
    BasicParameter<T>* param;
    std::size_t index;
  };
  std::vector<Entry> entries;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.tensor.size(); ++i) entries.push_back({&p, i});
  }
  if (sample && *sample < entries.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(*sample);
  }

  auto loss_at = [&](BasicParameter<T>& p, std::size_t i, T v) {
    p.tensor[i] = v;
    const auto& out = graph.evaluate(loss);
    if (!out.all_finite()) throw Error("grad_check: non-finite loss at perturbed '" + p.name + "'");
    return double(out[0]);
  };

  GradCheckResult result;
  for (const auto& e : entries) {
    BasicParameter<T>& p = *e.param;
    const T original = p.tensor[e.index];
    const T hi = T(double(original) + epsilon);
    const T lo = T(double(original) - epsilon);
    const double up = loss_at(p, e.index, hi);
    const double down = loss_at(p, e.index, lo);
    p.tensor[e.index] = original;
    const double numeric = (up - down) / (double(hi) - double(lo));
    auto it = analytic.find(p.name);
    const double a = it == analytic.end() ? 0.0 : double(it->second[e.index]);
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    ++result.entries_checked;
    if (err > result.max_rel_error || result.worst_entry.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) result.worst_entry = p.name + "[" + std::to_string(e.index) + "]";
    }
  }
  graph.evaluate(loss);
  return result;
}

template GradCheckResult grad_check<float>(const std::function<NodeRef(Graph&)>&, ParamStore&, double,
                                           std::optional<std::size_t>, std::uint64_t);
template GradCheckResult grad_check<double>(const std::function<NodeRef(GraphD&)>&, BasicParamStore<double>&, double,
                                            std::optional<std::size_t>, std::uint64_t);

}  // namespace arscr
