#include "arscr/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "arscr/error.hpp"

namespace arscr {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using CStridedR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b, const std::string& why = "") {
  throw ShapeError(std::string("shape mismatch in ") + op_name(op) + ": " + shape_str(a) + " vs " + shape_str(b) +
                   (why.empty() ? "" : " (" + why + ")"));
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> padded_strides(const Shape& s, std::size_t rank, const Shape& out) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t offset = rank - s.size();
  std::size_t acc = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    strides[d + offset] = (s[d] == 1 && out[d + offset] != 1) ? 0 : acc;
    acc *= s[d];
  }
  return strides;
}

Broadcast broadcast(Op op, const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    std::size_t da = d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    std::size_t db = d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b, "not broadcastable");
    bc.out[d] = std::max(da, db);
  }
  bc.stride_a = padded_strides(a, rank, bc.out);
  bc.stride_b = padded_strides(b, rank, bc.out);
  return bc;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t rank = bc.out.size();
  const std::size_t n = shape_size(bc.out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < bc.out[d]) {
        ia += bc.stride_a[d];
        ib += bc.stride_b[d];
        break;
      }
      ia -= bc.stride_a[d] * (bc.out[d] - 1);
      ib -= bc.stride_b[d] * (bc.out[d] - 1);
      idx[d] = 0;
    }
  }
}

// Splits a shape around `axis` into (outer, length, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.len = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Conv1d: return "conv1d";
    case Op::GruCell: return "recurrent-cell-step";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Softmax: return "softmax";
    case Op::ReduceSum: return "reduce-sum";
    case Op::ReduceMean: return "reduce-mean";
    case Op::Slice: return "slice";
    case Op::Concat: return "concat";
    case Op::Reshape: return "reshape";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::CrossEntropy: return "cross-entropy-loss";
  }
  return "unknown";
}

template <typename T>
void BasicGraph<T>::check(NodeRef n) const {
  if (n.index >= nodes_.size()) throw Error("node reference out of range");
}

template <typename T>
NodeRef BasicGraph<T>::push(Node node) {
  for (auto p : node.parents) {
    if (p >= nodes_.size()) throw Error("node reference out of range");
  }
  bool ready = true;
  bool grad = false;
  for (auto p : node.parents) {
    ready = ready && nodes_[p].evaluated;
    grad = grad || nodes_[p].requires_grad;
  }
  if (!node.parents.empty()) node.requires_grad = grad;
  nodes_.push_back(std::move(node));
  Node& added = nodes_.back();
  if (!added.parents.empty() && ready) {
    compute(added);
    added.evaluated = true;
  }
  return NodeRef{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeRef BasicGraph<T>::input(const std::string& name, std::optional<TensorT> value, bool requires_grad) {
  Node n;
  n.op = Op::Input;
  n.name = name;
  n.requires_grad = requires_grad;
  if (value) {
    n.value = std::move(*value);
    n.evaluated = true;
  }
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::constant(TensorT value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  n.evaluated = true;
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::parameter(ParamT& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return NodeRef{it->second};
  Node n;
  n.op = Op::Parameter;
  n.name = p.name;
  n.param = &p;
  n.value = p.tensor;
  n.evaluated = true;
  n.requires_grad = p.trainable;
  NodeRef ref = push(std::move(n));
  param_nodes_[&p] = ref.index;
  return ref;
}

#define ARSCR_NODE(opname, ...)  \
  Node n;                        \
  n.op = Op::opname;             \
  n.parents = {__VA_ARGS__};

template <typename T>
NodeRef BasicGraph<T>::add(NodeRef a, NodeRef b) {
  ARSCR_NODE(Add, a.index, b.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::mul(NodeRef a, NodeRef b) {
  ARSCR_NODE(Mul, a.index, b.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::sub(NodeRef a, NodeRef b) {
  return add(a, mul(b, scalar(T(-1))));
}

template <typename T>
NodeRef BasicGraph<T>::matmul(NodeRef a, NodeRef b) {
  ARSCR_NODE(MatMul, a.index, b.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::conv1d(NodeRef x, NodeRef w, std::size_t stride) {
  if (stride == 0) throw Error("conv1d stride must be positive");
  ARSCR_NODE(Conv1d, x.index, w.index);
  n.stride = stride;
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::gru_cell(NodeRef x, NodeRef h, NodeRef w_ih, NodeRef w_hh, NodeRef b_ih, NodeRef b_hh) {
  ARSCR_NODE(GruCell, x.index, h.index, w_ih.index, w_hh.index, b_ih.index, b_hh.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::tanh(NodeRef x) {
  ARSCR_NODE(Tanh, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::sigmoid(NodeRef x) {
  ARSCR_NODE(Sigmoid, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::exp(NodeRef x) {
  ARSCR_NODE(Exp, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::log(NodeRef x) {
  ARSCR_NODE(Log, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::softmax(NodeRef x) {
  ARSCR_NODE(Softmax, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::reduce_sum(NodeRef x, std::optional<std::size_t> axis) {
  ARSCR_NODE(ReduceSum, x.index);
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::reduce_mean(NodeRef x, std::optional<std::size_t> axis) {
  ARSCR_NODE(ReduceMean, x.index);
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::slice(NodeRef x, std::size_t axis, std::size_t begin, std::size_t end) {
  ARSCR_NODE(Slice, x.index);
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::concat(const std::vector<NodeRef>& xs, std::size_t axis) {
  if (xs.empty()) throw Error("concat of zero tensors");
  Node n;
  n.op = Op::Concat;
  for (auto x : xs) n.parents.push_back(x.index);
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::reshape(NodeRef x, std::vector<std::int64_t> shape) {
  if (std::count(shape.begin(), shape.end(), -1) > 1) throw Error("reshape: at most one inferred dimension");
  ARSCR_NODE(Reshape, x.index);
  n.new_shape = std::move(shape);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::sqrt(NodeRef x) {
  ARSCR_NODE(Sqrt, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::square(NodeRef x) {
  ARSCR_NODE(Square, x.index);
  return push(std::move(n));
}

template <typename T>
NodeRef BasicGraph<T>::cross_entropy(NodeRef logits, std::vector<int> labels) {
  ARSCR_NODE(CrossEntropy, logits.index);
  n.labels = std::move(labels);
  return push(std::move(n));
}

#undef ARSCR_NODE

template <typename T>
void BasicGraph<T>::compute(Node& node) {
  switch (node.op) {
    case Op::Input:
    case Op::Constant:
    case Op::Parameter:
      return;

    case Op::Add:
    case Op::Mul: {
      const TensorT& a = pval(node, 0);
      const TensorT& b = pval(node, 1);
      const bool is_add = node.op == Op::Add;
      if (a.shape() == b.shape()) {
        TensorT out(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = is_add ? a[i] + b[i] : a[i] * b[i];
        node.value = std::move(out);
        return;
      }
      Broadcast bc = broadcast(node.op, a.shape(), b.shape());
      TensorT out(bc.out);
      for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = is_add ? a[ia] + b[ib] : a[ia] * b[ib];
      });
      node.value = std::move(out);
      return;
    }

    case Op::MatMul: {
      const TensorT& a = pval(node, 0);
      const TensorT& b = pval(node, 1);
      if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) shape_fail(node.op, a.shape(), b.shape());
      const std::size_t k = b.dim(0);
      const std::size_t cols = b.dim(1);
      const std::size_t rows = a.size() / k;
      Shape out_shape = a.shape();
      out_shape.back() = cols;
      TensorT out(out_shape);
      MapR<T>(out.ptr(), rows, cols).noalias() = CMapR<T>(a.ptr(), rows, k) * CMapR<T>(b.ptr(), k, cols);
      node.value = std::move(out);
      return;
    }

    case Op::Conv1d: {
      const TensorT& x = pval(node, 0);
      const TensorT& w = pval(node, 1);
      if (x.rank() != 3 || w.rank() != 3 || x.dim(2) != w.dim(1)) shape_fail(node.op, x.shape(), w.shape());
      const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
      const std::size_t kernel = w.dim(0), cout = w.dim(2);
      if (len < kernel) shape_fail(node.op, x.shape(), w.shape(), "input shorter than kernel");
      const std::size_t tout = (len - kernel) / node.stride + 1;
      TensorT out(Shape{batch, tout, cout});
      CMapR<T> wm(w.ptr(), kernel * cin, cout);
      for (std::size_t b = 0; b < batch; ++b) {
        CStridedR<T> cols(x.ptr() + b * len * cin, tout, kernel * cin, Eigen::OuterStride<>(node.stride * cin));
        MapR<T>(out.ptr() + b * tout * cout, tout, cout).noalias() = cols * wm;
      }
      node.value = std::move(out);
      return;
    }

    case Op::GruCell: {
      const TensorT& x = pval(node, 0);
      const TensorT& h = pval(node, 1);
      const TensorT& wi = pval(node, 2);
      const TensorT& wh = pval(node, 3);
      const TensorT& bi = pval(node, 4);
      const TensorT& bh = pval(node, 5);
      if (x.rank() != 2 || h.rank() != 2 || x.dim(0) != h.dim(0)) shape_fail(node.op, x.shape(), h.shape(), "x vs h");
      const std::size_t batch = x.dim(0), in = x.dim(1), hid = h.dim(1);
      if (wi.shape() != Shape{in, 3 * hid}) shape_fail(node.op, wi.shape(), Shape{in, 3 * hid}, "w_ih");
      if (wh.shape() != Shape{hid, 3 * hid}) shape_fail(node.op, wh.shape(), Shape{hid, 3 * hid}, "w_hh");
      if (bi.shape() != Shape{3 * hid}) shape_fail(node.op, bi.shape(), Shape{3 * hid}, "b_ih");
      if (bh.shape() != Shape{3 * hid}) shape_fail(node.op, bh.shape(), Shape{3 * hid}, "b_hh");
      MatR<T> gi = CMapR<T>(x.ptr(), batch, in) * CMapR<T>(wi.ptr(), in, 3 * hid);
      MatR<T> gh = CMapR<T>(h.ptr(), batch, hid) * CMapR<T>(wh.ptr(), hid, 3 * hid);
      TensorT r(Shape{batch, hid}), z(Shape{batch, hid}), nn(Shape{batch, hid}), ghn(Shape{batch, hid});
      TensorT out(Shape{batch, hid});
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < hid; ++j) {
          const std::size_t o = b * hid + j;
          const T rv = sigmoid_scalar<T>(gi(b, j) + bi[j] + gh(b, j) + bh[j]);
          const T zv = sigmoid_scalar<T>(gi(b, hid + j) + bi[hid + j] + gh(b, hid + j) + bh[hid + j]);
          const T hn = gh(b, 2 * hid + j) + bh[2 * hid + j];
          const T nv = std::tanh(gi(b, 2 * hid + j) + bi[2 * hid + j] + rv * hn);
          r[o] = rv;
          z[o] = zv;
          nn[o] = nv;
          ghn[o] = hn;
          out[o] = (T(1) - zv) * nv + zv * h[o];
        }
      }
      node.cache = {std::move(r), std::move(z), std::move(nn), std::move(ghn)};
      node.value = std::move(out);
      return;
    }

    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Square: {
      const TensorT& x = pval(node, 0);
      TensorT out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        switch (node.op) {
          case Op::Tanh: out[i] = std::tanh(v); break;
          case Op::Sigmoid: out[i] = sigmoid_scalar(v); break;
          case Op::Exp: out[i] = std::exp(v); break;
          case Op::Log: out[i] = std::log(v); break;
          case Op::Sqrt: out[i] = std::sqrt(v); break;
          default: out[i] = v * v; break;
        }
      }
      node.value = std::move(out);
      return;
    }

    case Op::Softmax: {
      const TensorT& x = pval(node, 0);
      if (x.rank() < 1) shape_fail(node.op, x.shape(), Shape{1}, "rank 0");
      const std::size_t cols = x.shape().back();
      const std::size_t rows = x.size() / cols;
      TensorT out(x.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.ptr() + r * cols;
        T* o = out.ptr() + r * cols;
        const T mx = *std::max_element(in, in + cols);
        double sum = 0;
        for (std::size_t c = 0; c < cols; ++c) sum += std::exp(double(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) o[c] = T(std::exp(double(in[c] - mx)) / sum);
      }
      node.value = std::move(out);
      return;
    }

    case Op::ReduceSum:
    case Op::ReduceMean: {
      const TensorT& x = pval(node, 0);
      const bool mean = node.op == Op::ReduceMean;
      if (!node.axis) {
        double sum = 0;
        for (T v : x.data()) sum += v;
        if (mean) sum /= double(x.size());
        node.value = TensorT::scalar(T(sum));
        return;
      }
      if (*node.axis >= x.rank()) shape_fail(node.op, x.shape(), Shape{*node.axis}, "axis out of range");
      AxisSplit s = split_axis(x.shape(), *node.axis);
      Shape out_shape = x.shape();
      out_shape.erase(out_shape.begin() + std::ptrdiff_t(*node.axis));
      TensorT out(out_shape);
      std::vector<double> acc(s.inner);
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t l = 0; l < s.len; ++l) {
          const T* row = x.ptr() + (o * s.len + l) * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) acc[i] += row[i];
        }
        for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] = T(mean ? acc[i] / double(s.len) : acc[i]);
      }
      node.value = std::move(out);
      return;
    }

    case Op::Slice: {
      const TensorT& x = pval(node, 0);
      const std::size_t axis = *node.axis;
      if (axis >= x.rank() || node.begin >= node.end || node.end > x.dim(axis)) {
        shape_fail(node.op, x.shape(), Shape{axis, node.begin, node.end}, "axis/begin/end out of range");
      }
      AxisSplit s = split_axis(x.shape(), axis);
      Shape out_shape = x.shape();
      const std::size_t width = node.end - node.begin;
      out_shape[axis] = width;
      TensorT out(out_shape);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* src = x.ptr() + (o * s.len + node.begin) * s.inner;
        std::copy(src, src + width * s.inner, out.ptr() + o * width * s.inner);
      }
      node.value = std::move(out);
      return;
    }

    case Op::Concat: {
      const std::size_t axis = *node.axis;
      const TensorT& first = pval(node, 0);
      if (axis >= first.rank()) shape_fail(node.op, first.shape(), Shape{axis}, "axis out of range");
      Shape out_shape = first.shape();
      out_shape[axis] = 0;
      for (std::size_t i = 0; i < node.parents.size(); ++i) {
        const Shape& si = pval(node, i).shape();
        if (si.size() != first.rank()) shape_fail(node.op, first.shape(), si);
        for (std::size_t d = 0; d < si.size(); ++d) {
          if (d != axis && si[d] != first.dim(d)) shape_fail(node.op, first.shape(), si);
        }
        out_shape[axis] += si[axis];
      }
      TensorT out(out_shape);
      AxisSplit so = split_axis(out_shape, axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.parents.size(); ++i) {
        const TensorT& xi = pval(node, i);
        const std::size_t chunk = xi.dim(axis) * so.inner;
        for (std::size_t o = 0; o < so.outer; ++o) {
          const T* src = xi.ptr() + o * chunk;
          std::copy(src, src + chunk, out.ptr() + o * so.len * so.inner + offset);
        }
        offset += chunk;
      }
      node.value = std::move(out);
      return;
    }

    case Op::Reshape: {
      const TensorT& x = pval(node, 0);
      Shape out_shape(node.new_shape.size());
      std::size_t known = 1;
      std::ptrdiff_t inferred = -1;
      for (std::size_t d = 0; d < node.new_shape.size(); ++d) {
        if (node.new_shape[d] == -1) {
          inferred = std::ptrdiff_t(d);
        } else if (node.new_shape[d] <= 0) {
          shape_fail(node.op, x.shape(), Shape{}, "non-positive target dimension");
        } else {
          out_shape[d] = std::size_t(node.new_shape[d]);
          known *= out_shape[d];
        }
      }
      if (inferred >= 0) {
        if (known == 0 || x.size() % known != 0) shape_fail(node.op, x.shape(), out_shape, "cannot infer dimension");
        out_shape[std::size_t(inferred)] = x.size() / known;
      }
      if (shape_size(out_shape) != x.size()) shape_fail(node.op, x.shape(), out_shape);
      node.value = x.reshaped(out_shape);
      return;
    }

    case Op::CrossEntropy: {
      const TensorT& z = pval(node, 0);
      if (z.rank() != 2 || z.dim(0) != node.labels.size()) {
        shape_fail(node.op, z.shape(), Shape{node.labels.size()}, "logits [B, C] vs labels [B]");
      }
      const std::size_t batch = z.dim(0), classes = z.dim(1);
      TensorT probs(z.shape());
      double loss = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const int label = node.labels[b];
        if (label < 0 || std::size_t(label) >= classes) {
          throw Error("cross-entropy-loss: label " + std::to_string(label) + " outside [0, " +
                      std::to_string(classes) + ")");
        }
        const T* row = z.ptr() + b * classes;
        const double mx = *std::max_element(row, row + classes);
        double sum = 0;
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(double(row[c]) - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = T(std::exp(double(row[c]) - lse));
        loss += lse - double(row[label]);
      }
      node.cache = {std::move(probs)};
      node.value = TensorT::scalar(T(loss / double(batch)));
      return;
    }
  }
}

template <typename T>
typename BasicGraph<T>::TensorT* BasicGraph<T>::grad_slot(const Node& node, std::size_t i) {
  Node& p = nodes_[node.parents[i]];
  if (!p.requires_grad) return nullptr;
  if (!p.has_grad) {
    p.grad = TensorT(p.value.shape());
    p.has_grad = true;
  }
  return &p.grad;
}

template <typename T>
void BasicGraph<T>::propagate(Node& node) {
  const TensorT& g = node.grad;
  switch (node.op) {
    case Op::Input:
    case Op::Constant:
    case Op::Parameter:
      return;

    case Op::Add:
    case Op::Mul: {
      const TensorT& a = pval(node, 0);
      const TensorT& b = pval(node, 1);
      TensorT* ga = grad_slot(node, 0);
      TensorT* gb = grad_slot(node, 1);
      const bool is_add = node.op == Op::Add;
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ga) (*ga)[i] += is_add ? g[i] : g[i] * b[i];
          if (gb) (*gb)[i] += is_add ? g[i] : g[i] * a[i];
        }
        return;
      }
      Broadcast bc = broadcast(node.op, a.shape(), b.shape());
      std::vector<double> acc_a(ga ? a.size() : 0, 0.0);
      std::vector<double> acc_b(gb ? b.size() : 0, 0.0);
      for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if (ga) acc_a[ia] += is_add ? double(g[i]) : double(g[i]) * double(b[ib]);
        if (gb) acc_b[ib] += is_add ? double(g[i]) : double(g[i]) * double(a[ia]);
      });
      for (std::size_t i = 0; i < acc_a.size(); ++i) (*ga)[i] += T(acc_a[i]);
      for (std::size_t i = 0; i < acc_b.size(); ++i) (*gb)[i] += T(acc_b[i]);
      return;
    }

    case Op::MatMul: {
      const TensorT& a = pval(node, 0);
      const TensorT& b = pval(node, 1);
      const std::size_t k = b.dim(0), cols = b.dim(1), rows = a.size() / k;
      CMapR<T> gm(g.ptr(), rows, cols);
      if (TensorT* ga = grad_slot(node, 0)) {
        MapR<T>(ga->ptr(), rows, k).noalias() += gm * CMapR<T>(b.ptr(), k, cols).transpose();
      }
      if (TensorT* gb = grad_slot(node, 1)) {
        MapR<T>(gb->ptr(), k, cols).noalias() += CMapR<T>(a.ptr(), rows, k).transpose() * gm;
      }
      return;
    }

    case Op::Conv1d: {
      const TensorT& x = pval(node, 0);
      const TensorT& w = pval(node, 1);
      const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
      const std::size_t kernel = w.dim(0), cout = w.dim(2);
      const std::size_t tout = node.value.dim(1);
      const std::size_t width = kernel * cin;
      TensorT* gx = grad_slot(node, 0);
      TensorT* gw = grad_slot(node, 1);
      CMapR<T> wm(w.ptr(), width, cout);
      MatR<T> dcols;
      for (std::size_t b = 0; b < batch; ++b) {
        CMapR<T> gb(g.ptr() + b * tout * cout, tout, cout);
        if (gw) {
          CStridedR<T> cols(x.ptr() + b * len * cin, tout, width, Eigen::OuterStride<>(node.stride * cin));
          MapR<T>(gw->ptr(), width, cout).noalias() += cols.transpose() * gb;
        }
        if (gx) {
          dcols.noalias() = gb * wm.transpose();
          T* base = gx->ptr() + b * len * cin;
          for (std::size_t t = 0; t < tout; ++t) {
            T* dst = base + t * node.stride * cin;
            const T* src = dcols.data() + t * width;
            for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
          }
        }
      }
      return;
    }

    case Op::GruCell: {
      const TensorT& x = pval(node, 0);
      const TensorT& h = pval(node, 1);
      const TensorT& wi = pval(node, 2);
      const TensorT& wh = pval(node, 3);
      const std::size_t batch = x.dim(0), in = x.dim(1), hid = h.dim(1);
      const TensorT& r = node.cache[0];
      const TensorT& z = node.cache[1];
      const TensorT& nn = node.cache[2];
      const TensorT& ghn = node.cache[3];
      MatR<T> dgi(batch, 3 * hid);
      MatR<T> dgh(batch, 3 * hid);
      TensorT* gh_direct = grad_slot(node, 1);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < hid; ++j) {
          const std::size_t o = b * hid + j;
          const T dh = g[o];
          const T dn = dh * (T(1) - z[o]);
          const T dz = dh * (h[o] - nn[o]);
          const T dn_pre = dn * (T(1) - nn[o] * nn[o]);
          const T dr = dn_pre * ghn[o];
          const T dr_pre = dr * r[o] * (T(1) - r[o]);
          const T dz_pre = dz * z[o] * (T(1) - z[o]);
          dgi(b, j) = dr_pre;
          dgi(b, hid + j) = dz_pre;
          dgi(b, 2 * hid + j) = dn_pre;
          dgh(b, j) = dr_pre;
          dgh(b, hid + j) = dz_pre;
          dgh(b, 2 * hid + j) = dn_pre * r[o];
          if (gh_direct) (*gh_direct)[o] += dh * z[o];
        }
      }
      if (TensorT* gx = grad_slot(node, 0)) {
        MapR<T>(gx->ptr(), batch, in).noalias() += dgi * CMapR<T>(wi.ptr(), in, 3 * hid).transpose();
      }
      if (gh_direct) {
        MapR<T>(gh_direct->ptr(), batch, hid).noalias() += dgh * CMapR<T>(wh.ptr(), hid, 3 * hid).transpose();
      }
      if (TensorT* gwi = grad_slot(node, 2)) {
        MapR<T>(gwi->ptr(), in, 3 * hid).noalias() += CMapR<T>(x.ptr(), batch, in).transpose() * dgi;
      }
      if (TensorT* gwh = grad_slot(node, 3)) {
        MapR<T>(gwh->ptr(), hid, 3 * hid).noalias() += CMapR<T>(h.ptr(), batch, hid).transpose() * dgh;
      }
      if (TensorT* gbi = grad_slot(node, 4)) {
        for (std::size_t c = 0; c < 3 * hid; ++c) {
          double s = 0;
          for (std::size_t b = 0; b < batch; ++b) s += dgi(b, c);
          (*gbi)[c] += T(s);
        }
      }
      if (TensorT* gbh = grad_slot(node, 5)) {
        for (std::size_t c = 0; c < 3 * hid; ++c) {
          double s = 0;
          for (std::size_t b = 0; b < batch; ++b) s += dgh(b, c);
          (*gbh)[c] += T(s);
        }
      }
      return;
    }

    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Square: {
      TensorT* gx = grad_slot(node, 0);
      if (!gx) return;
      const TensorT& x = pval(node, 0);
      const TensorT& y = node.value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        T d;
        switch (node.op) {
          case Op::Tanh: d = T(1) - y[i] * y[i]; break;
          case Op::Sigmoid: d = y[i] * (T(1) - y[i]); break;
          case Op::Exp: d = y[i]; break;
          case Op::Log: d = T(1) / x[i]; break;
          case Op::Sqrt: d = y[i] > T(0) ? T(0.5) / y[i] : T(0); break;
          default: d = T(2) * x[i]; break;
        }
        (*gx)[i] += g[i] * d;
      }
      return;
    }

    case Op::Softmax: {
      TensorT* gx = grad_slot(node, 0);
      if (!gx) return;
      const TensorT& y = node.value;
      const std::size_t cols = y.shape().back();
      const std::size_t rows = y.size() / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += double(g[r * cols + c]) * double(y[r * cols + c]);
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          (*gx)[i] += T(double(y[i]) * (double(g[i]) - dot));
        }
      }
      return;
    }

    case Op::ReduceSum:
    case Op::ReduceMean: {
      TensorT* gx = grad_slot(node, 0);
      if (!gx) return;
      const TensorT& x = pval(node, 0);
      const bool mean = node.op == Op::ReduceMean;
      if (!node.axis) {
        const T scale = mean ? T(1) / T(x.size()) : T(1);
        for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g[0] * scale;
        return;
      }
      AxisSplit s = split_axis(x.shape(), *node.axis);
      const T scale = mean ? T(1) / T(s.len) : T(1);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
          T* row = gx->ptr() + (o * s.len + l) * s.inner;
          const T* src = g.ptr() + o * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) row[i] += src[i] * scale;
        }
      }
      return;
    }

    case Op::Slice: {
      TensorT* gx = grad_slot(node, 0);
      if (!gx) return;
      const TensorT& x = pval(node, 0);
      AxisSplit s = split_axis(x.shape(), *node.axis);
      const std::size_t width = node.end - node.begin;
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = gx->ptr() + (o * s.len + node.begin) * s.inner;
        const T* src = g.ptr() + o * width * s.inner;
        for (std::size_t i = 0; i < width * s.inner; ++i) dst[i] += src[i];
      }
      return;
    }

    case Op::Concat: {
      const std::size_t axis = *node.axis;
      AxisSplit so = split_axis(node.value.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.parents.size(); ++i) {
        const TensorT& xi = pval(node, i);
        const std::size_t chunk = xi.dim(axis) * so.inner;
        if (TensorT* gx = grad_slot(node, i)) {
          for (std::size_t o = 0; o < so.outer; ++o) {
            const T* src = g.ptr() + o * so.len * so.inner + offset;
            T* dst = gx->ptr() + o * chunk;
            for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
          }
        }
        offset += chunk;
      }
      return;
    }

    case Op::Reshape: {
      TensorT* gx = grad_slot(node, 0);
      if (!gx) return;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      return;
    }

    case Op::CrossEntropy: {
      TensorT* gz = grad_slot(node, 0);
      if (!gz) return;
      const TensorT& probs = node.cache[0];
      const std::size_t batch = probs.dim(0), classes = probs.dim(1);
      const T scale = g[0] / T(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < classes; ++c) {
          const std::size_t i = b * classes + c;
          const T target = int(c) == node.labels[b] ? T(1) : T(0);
          (*gz)[i] += (probs[i] - target) * scale;
        }
      }
      return;
    }
  }
}

template <typename T>
const typename BasicGraph<T>::TensorT& BasicGraph<T>::evaluate(NodeRef root, const Bindings& bindings) {
  check(root);
  std::vector<char> reachable(root.index + 1, 0);
  std::vector<std::uint32_t> stack{root.index};
  reachable[root.index] = 1;
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    for (auto p : nodes_[i].parents) {
      if (!reachable[p]) {
        reachable[p] = 1;
        stack.push_back(p);
      }
    }
  }
  for (auto& [name, _] : bindings) {
    bool found = false;
    for (const auto& n : nodes_) found = found || (n.op == Op::Input && n.name == name);
    if (!found) throw Error("binding for unknown input '" + name + "'");
  }
  for (std::uint32_t i = 0; i <= root.index; ++i) {
    if (!reachable[i]) continue;
    Node& n = nodes_[i];
    switch (n.op) {
      case Op::Input: {
        auto it = bindings.find(n.name);
        if (it != bindings.end()) {
          n.value = it->second;
          n.evaluated = true;
        } else if (!n.evaluated) {
          throw Error("unbound input '" + n.name + "'");
        }
        break;
      }
      case Op::Constant:
        break;
      case Op::Parameter:
        n.value = n.param->tensor;
        break;
      default:
        compute(n);
        n.evaluated = true;
        break;
    }
  }
  return nodes_[root.index].value;
}

template <typename T>
BasicGradients<T> BasicGraph<T>::backward(NodeRef loss) {
  check(loss);
  Node& root = nodes_[loss.index];
  if (!root.evaluated) throw Error("backward before evaluation");
  if (root.value.size() != 1) throw Error("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = TensorT();
    if (n.op == Op::Parameter) n.requires_grad = n.param->trainable;
    if (!n.parents.empty()) {
      n.requires_grad = false;
      for (auto p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
  }
  if (root.requires_grad) {
    root.grad = TensorT(root.value.shape(), T(1));
    root.has_grad = true;
    for (std::uint32_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && !n.parents.empty()) propagate(n);
    }
  }
  BasicGradients<T> grads;
  for (auto& n : nodes_) {
    if (n.op != Op::Parameter || !n.param->trainable) continue;
    grads[n.name] = n.has_grad ? n.grad : TensorT(n.param->tensor.shape());
  }
  return grads;
}

template <typename T>
const typename BasicGraph<T>::TensorT& BasicGraph<T>::value(NodeRef n) const {
  check(n);
  const Node& node = nodes_[n.index];
  if (!node.evaluated) throw Error(std::string("node '") + op_name(node.op) + "' has not been evaluated");
  return node.value;
}

template <typename T>
const typename BasicGraph<T>::TensorT& BasicGraph<T>::grad(NodeRef n) const {
  check(n);
  const Node& node = nodes_[n.index];
  if (!node.has_grad) throw Error(std::string("node '") + op_name(node.op) + "' has no gradient");
  return node.grad;
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace arscr
