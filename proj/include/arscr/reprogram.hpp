#pragma once

// Trainable additive input transformation.
//
//   pad-mask:  x' = Pad(x) + M * theta   (x placed at the start, M = 0 there, 1 after)
//   full:      x' = x + theta
//
// theta lives in a one-entry parameter store under the name "reprogram.theta"
// so it can be optimized and checkpointed like any other parameter set.

#include <cstdint>
#include <random>
#include <vector>

#include "arscr/graph.hpp"
#include "arscr/params.hpp"

namespace arscr {

enum class ReprogramMode { PadMask, Full };
enum class ReprogramDomain { Waveform, Feature };

inline constexpr const char* kThetaName = "reprogram.theta";

template <typename T>
struct BasicReprogramLayer {
  ReprogramMode mode = ReprogramMode::Full;
  ReprogramDomain domain = ReprogramDomain::Waveform;
  BasicParamStore<T> params;
  /// Pad-mask mode only: 0 where the padded target sits, 1 elsewhere.
  std::vector<std::uint8_t> mask;

  BasicParameter<T>& theta() { return params.get(kThetaName); }
  const BasicParameter<T>& theta() const { return params.get(kThetaName); }
  std::size_t num_trainable() const { return params.count(true); }

  template <typename U>
  BasicReprogramLayer<U> cast() const {
    return BasicReprogramLayer<U>{mode, domain, params.template cast<U>(), mask};
  }
};

using ReprogramLayer = BasicReprogramLayer<float>;

/// Uniform in [-scale, scale], deterministic for a given rng state.
Parameter init_theta(const Shape& shape, double scale, std::mt19937_64& rng);

/// Mask of length `source_len` with zeros over the first `target_len` entries.
std::vector<std::uint8_t> pad_mask(std::size_t target_len, std::size_t source_len);

ReprogramLayer make_full_layer(const Shape& theta_shape, ReprogramDomain domain, double scale, std::uint64_t seed);
ReprogramLayer make_pad_layer(std::size_t target_len, std::size_t source_len, double scale, std::uint64_t seed);

/// Graph form. `x` is [B, ...] (batched) or exactly theta-shaped; theta broadcasts over the batch.
template <typename T>
NodeRef apply_reprogram(BasicGraph<T>& g, BasicReprogramLayer<T>& layer, NodeRef x);

extern template NodeRef apply_reprogram<float>(Graph&, ReprogramLayer&, NodeRef);
extern template NodeRef apply_reprogram<double>(GraphD&, BasicReprogramLayer<double>&, NodeRef);

/// x of length d_T <= d_S -> length d_S.
Tensor reprogram_pad(const Tensor& x, ReprogramLayer& layer);
/// shape(x) == shape(theta).
Tensor reprogram_full(const Tensor& x, ReprogramLayer& layer);

}  // namespace arscr
