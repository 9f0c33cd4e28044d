#pragma once

#include <map>
#include <string>

#include "arscr/error.hpp"
#include "arscr/tensor.hpp"

namespace arscr {

template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> tensor;
  bool trainable = true;
};

/// Named parameter collection, ordered by name. Node pointers into the store
/// stay valid across insertions.
template <typename T>
class BasicParamStore {
 public:
  using Param = BasicParameter<T>;
  using Map = std::map<std::string, Param>;

  Param& add(const std::string& name, BasicTensor<T> tensor, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name, Param{name, std::move(tensor), trainable});
    if (!inserted) throw Error("duplicate parameter name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Param& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }
  const Param& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }

  void erase(const std::string& name) { params_.erase(name); }

  void set_trainable(bool trainable) {
    for (auto& [_, p] : params_) p.trainable = trainable;
  }

  /// Total element count, optionally restricted to trainable parameters.
  std::size_t count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) {
      if (!trainable_only || p.trainable) n += p.tensor.size();
    }
    return n;
  }

  std::size_t num_tensors() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.tensor.template cast<U>(), p.trainable);
    return out;
  }

  /// Bitwise equality of names, shapes, values and trainable flags.
  bool identical(const BasicParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    auto a = params_.begin();
    auto b = other.params_.begin();
    for (; a != params_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.trainable != b->second.trainable ||
          !a->second.tensor.identical(b->second.tensor)) {
        return false;
      }
    }
    return true;
  }

 private:
  Map params_;
};

using Parameter = BasicParameter<float>;
using ParamStore = BasicParamStore<float>;

/// Parameter name to gradient.
template <typename T>
using BasicGradients = std::map<std::string, BasicTensor<T>>;
using Gradients = BasicGradients<float>;

}  // namespace arscr
