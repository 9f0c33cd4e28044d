#include "arscr/reprogram.hpp"

#include "arscr/error.hpp"

namespace arscr {

Parameter init_theta(const Shape& shape, double scale, std::mt19937_64& rng) {
  if (!(scale >= 0)) throw Error("init_theta: scale must be non-negative");
  Tensor t(shape);
  if (scale > 0) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& v : t.data()) v = float(dist(rng));
  }
  return Parameter{kThetaName, std::move(t), true};
}

std::vector<std::uint8_t> pad_mask(std::size_t target_len, std::size_t source_len) {
  if (target_len > source_len) throw Error("target longer than source");
  std::vector<std::uint8_t> mask(source_len, 1);
  std::fill(mask.begin(), mask.begin() + std::ptrdiff_t(target_len), 0);
  return mask;
}

ReprogramLayer make_full_layer(const Shape& theta_shape, ReprogramDomain domain, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ReprogramLayer layer;
  layer.mode = ReprogramMode::Full;
  layer.domain = domain;
  Parameter theta = init_theta(theta_shape, scale, rng);
  layer.params.add(theta.name, std::move(theta.tensor));
  return layer;
}

ReprogramLayer make_pad_layer(std::size_t target_len, std::size_t source_len, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ReprogramLayer layer;
  layer.mode = ReprogramMode::PadMask;
  layer.domain = ReprogramDomain::Waveform;
  layer.mask = pad_mask(target_len, source_len);
  Parameter theta = init_theta(Shape{source_len}, scale, rng);
  layer.params.add(theta.name, std::move(theta.tensor));
  return layer;
}

template <typename T>
NodeRef apply_reprogram(BasicGraph<T>& g, BasicReprogramLayer<T>& layer, NodeRef x) {
  auto& theta = layer.theta();
  const Shape& ts = theta.tensor.shape();
  const Shape xs = g.shape(x);
  const bool batched = xs.size() == ts.size() + 1;
  if (!batched && xs.size() != ts.size()) {
    throw ShapeError("reprogram: input " + shape_str(xs) + " incompatible with theta " + shape_str(ts));
  }
  NodeRef th = g.parameter(theta);

  if (layer.mode == ReprogramMode::Full) {
    const Shape inner(xs.begin() + (batched ? 1 : 0), xs.end());
    if (inner != ts) throw ShapeError("reprogram: input " + shape_str(xs) + " vs theta " + shape_str(ts));
    return g.add(x, th);
  }

  if (ts.size() != 1 || layer.mask.size() != ts[0]) throw Error("pad-mask reprogramming needs a 1-D theta and mask");
  const std::size_t source_len = ts[0];
  const std::size_t target_len = xs.back();
  if (target_len > source_len) throw Error("target longer than source");
  for (auto v : layer.mask) {
    if (v > 1) throw Error("reprogram mask entries must be 0 or 1");
  }
  NodeRef padded = x;
  if (target_len < source_len) {
    Shape zshape = xs;
    zshape.back() = source_len - target_len;
    padded = g.concat({x, g.constant(BasicTensor<T>(zshape))}, xs.size() - 1);
  }
  BasicTensor<T> m(Shape{source_len});
  for (std::size_t i = 0; i < source_len; ++i) m[i] = T(layer.mask[i]);
  return g.add(padded, g.mul(th, g.constant(std::move(m))));
}

template NodeRef apply_reprogram<float>(Graph&, ReprogramLayer&, NodeRef);
template NodeRef apply_reprogram<double>(GraphD&, BasicReprogramLayer<double>&, NodeRef);

Tensor reprogram_pad(const Tensor& x, ReprogramLayer& layer) {
  if (layer.mode != ReprogramMode::PadMask) throw Error("reprogram_pad requires a pad-mask layer");
  if (x.rank() != 1) throw ShapeError("reprogram_pad expects a 1-D input, got " + shape_str(x.shape()));
  Graph g;
  return g.value(apply_reprogram(g, layer, g.constant(x)));
}

Tensor reprogram_full(const Tensor& x, ReprogramLayer& layer) {
  if (x.shape() != layer.theta().tensor.shape()) {
    throw ShapeError("reprogram_full: input " + shape_str(x.shape()) + " vs theta " +
                     shape_str(layer.theta().tensor.shape()));
  }
  if (layer.mode != ReprogramMode::Full) throw Error("reprogram_full requires a full-sequence layer");
  Graph g;
  return g.value(apply_reprogram(g, layer, g.constant(x)));
}

}  // namespace arscr
