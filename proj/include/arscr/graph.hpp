#pragma once

// Reverse-mode automatic differentiation over a closed set of tensor ops.
//
// Nodes are evaluated eagerly when every parent already has a value, so model
// code can read shapes while it builds the graph. `evaluate` recomputes every
// node reachable from a root in creation order, which is a topological order,
// after (re)binding named inputs and re-reading parameter values.
//
// Broadcasting for add/mul follows numpy rules. Reductions accumulate in double.
//
// Recurrent cell (gated, two gates: reset r and update z):
//   r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
//   z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
//   n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
//   h' = (1 - z) * n + z * h
// with W_i = [W_ir | W_iz | W_in] of shape [in, 3H], W_h likewise [H, 3H],
// and biases of shape [3H] in the same gate order.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "arscr/params.hpp"
#include "arscr/tensor.hpp"

namespace arscr {

enum class Op : std::uint8_t {
  Input,
  Constant,
  Parameter,
  Add,
  Mul,
  MatMul,
  Conv1d,
  GruCell,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Softmax,
  ReduceSum,
  ReduceMean,
  Slice,
  Concat,
  Reshape,
  Sqrt,
  Square,
  CrossEntropy,
};

const char* op_name(Op op);

struct NodeRef {
  std::uint32_t index = 0;
  friend bool operator==(NodeRef a, NodeRef b) = default;
};

template <typename T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;
  using ParamT = BasicParameter<T>;
  using Bindings = std::map<std::string, TensorT>;

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;
  BasicGraph(BasicGraph&&) = default;
  BasicGraph& operator=(BasicGraph&&) = default;

  /// Named placeholder. Without a value it must be bound in `evaluate`.
  NodeRef input(const std::string& name, std::optional<TensorT> value = std::nullopt, bool requires_grad = false);
  NodeRef constant(TensorT value);
  NodeRef scalar(T v) { return constant(TensorT::scalar(v)); }
  /// One node per parameter; repeated calls return the same node.
  NodeRef parameter(ParamT& p);

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  /// a [..., K] x b [K, N] -> [..., N]
  NodeRef matmul(NodeRef a, NodeRef b);
  /// x [B, T, Cin] with kernel w [K, Cin, Cout] -> [B, (T - K) / stride + 1, Cout]. No padding.
  NodeRef conv1d(NodeRef x, NodeRef w, std::size_t stride);
  NodeRef gru_cell(NodeRef x, NodeRef h, NodeRef w_ih, NodeRef w_hh, NodeRef b_ih, NodeRef b_hh);
  NodeRef tanh(NodeRef x);
  NodeRef sigmoid(NodeRef x);
  NodeRef exp(NodeRef x);
  NodeRef log(NodeRef x);
  /// Along the last axis.
  NodeRef softmax(NodeRef x);
  /// Removes `axis`; without an axis reduces to a rank-0 scalar.
  NodeRef reduce_sum(NodeRef x, std::optional<std::size_t> axis = std::nullopt);
  NodeRef reduce_mean(NodeRef x, std::optional<std::size_t> axis = std::nullopt);
  /// Keeps the axis, restricted to [begin, end).
  NodeRef slice(NodeRef x, std::size_t axis, std::size_t begin, std::size_t end);
  NodeRef concat(const std::vector<NodeRef>& xs, std::size_t axis);
  /// At most one entry may be -1 (inferred).
  NodeRef reshape(NodeRef x, std::vector<std::int64_t> shape);
  /// Square root; the derivative at exactly 0 is taken as 0.
  NodeRef sqrt(NodeRef x);
  NodeRef square(NodeRef x);
  /// Mean over the batch of -log softmax(logits)[label]; logits [B, C].
  NodeRef cross_entropy(NodeRef logits, std::vector<int> labels);

  /// Recomputes every node reachable from `root`. Bindings replace input values.
  const TensorT& evaluate(NodeRef root, const Bindings& bindings = {});

  /// Gradients of a scalar loss for every trainable parameter reachable from it.
  /// Frozen parameters are omitted.
  BasicGradients<T> backward(NodeRef loss);

  const TensorT& value(NodeRef n) const;
  const Shape& shape(NodeRef n) const { return value(n).shape(); }
  bool has_value(NodeRef n) const { return nodes_.at(n.index).evaluated; }
  /// Gradient of the last `backward` loss with respect to `n`.
  const TensorT& grad(NodeRef n) const;
  bool has_grad(NodeRef n) const { return nodes_.at(n.index).has_grad; }
  bool requires_grad(NodeRef n) const { return nodes_.at(n.index).requires_grad; }
  Op op(NodeRef n) const { return nodes_.at(n.index).op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Input;
    std::vector<std::uint32_t> parents;
    TensorT value;
    TensorT grad;
    std::vector<TensorT> cache;
    bool evaluated = false;
    bool has_grad = false;
    bool requires_grad = false;
    std::string name;
    ParamT* param = nullptr;
    std::size_t stride = 1;
    std::optional<std::size_t> axis;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<std::int64_t> new_shape;
    std::vector<int> labels;
  };

  NodeRef push(Node node);
  void compute(Node& node);
  void propagate(Node& node);
  const TensorT& pval(const Node& node, std::size_t i) const { return nodes_[node.parents[i]].value; }
  Node& parent(const Node& node, std::size_t i) { return nodes_[node.parents[i]]; }
  TensorT* grad_slot(const Node& node, std::size_t i);
  void check(NodeRef n) const;

  std::vector<Node> nodes_;
  std::map<const ParamT*, std::uint32_t> param_nodes_;
};

using Graph = BasicGraph<float>;
using GraphD = BasicGraph<double>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

}  // namespace arscr
