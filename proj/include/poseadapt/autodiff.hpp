#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "poseadapt/tensor.hpp"

namespace poseadapt {

class Value;

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily; leaves keep it across backward calls
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

// Handle to one node of the recorded computation graph. Creation order (seq)
// is a topological order; backward replays it reversed.
class Value {
 public:
  Value() = default;

  static Value leaf(Tensor t, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    n->seq = detail::next_seq();
    return Value(std::move(n));
  }

  static Value constant(Tensor t) { return leaf(std::move(t), false); }
  static Value constant(double v) { return leaf(Tensor::scalar(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& mutable_val() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }

  // Gradient buffer; zeros if backward has not touched this node yet.
  const Tensor& grad() const { return node_->ensure_grad(); }
  Tensor& grad() { return node_->ensure_grad(); }

  void zero_grad() { node_->ensure_grad().fill(0.0); }

  // New leaf sharing no graph history with this value.
  Value detach() const { return leaf(node_->value, false); }

  detail::NodePtr node() const { return node_; }

 private:
  explicit Value(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;

  friend Value make_op(Tensor out, std::vector<Value> inputs,
                       std::function<void(detail::Node&)> backward_fn);
};

// Records one primitive: output value, input references, and the pullback.
// The op is recorded only when some input requires gradients.
inline Value make_op(Tensor out, std::vector<Value> inputs,
                     std::function<void(detail::Node&)> backward_fn) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(out);
  n->seq = detail::next_seq();
  bool needs = false;
  for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Value(std::move(n));
}

// Reverse-mode sweep from a scalar loss. Intermediate adjoints are reset per
// call; leaf gradients accumulate across calls until zero_grad.
inline void backward(const Value& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (detail::Node* n : order) {
    if (!n->is_leaf) n->ensure_grad().fill(0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (detail::Node* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Broadcasting (numpy-style, right-aligned; extents must match or be 1).
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t ea = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    std::size_t eb = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes not broadcastable " + shape_str(a) +
                                  " vs " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace detail {

// Row-major strides with 0 for broadcast axes, left-padded to out rank.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    std::size_t axis = in.size() - 1 - i;
    std::size_t out_axis = out.size() - 1 - i;
    strides[out_axis] = (in[axis] == 1) ? 0 : s;
    s *= in[axis];
  }
  return strides;
}

template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t n = shape_size(out);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(flat, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Sum grad over axes that were broadcast to reach `out_shape` from `in_shape`.
inline Tensor reduce_to_shape(const Tensor& g, const Shape& in_shape) {
  if (g.shape() == in_shape) return g;
  Tensor out(in_shape);
  auto strides = broadcast_strides(in_shape, g.shape());
  std::vector<std::size_t> zero(g.shape().size(), 0);
  for_each_broadcast(g.shape(), strides, zero,
                     [&](std::size_t flat, std::size_t ii, std::size_t) { out[ii] += g[flat]; });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary primitives.
// ---------------------------------------------------------------------------

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

inline const char* binop_name(BinOp op) {
  switch (op) {
    case BinOp::Add: return "add";
    case BinOp::Sub: return "sub";
    case BinOp::Mul: return "mul";
    default: return "div";
  }
}

inline Value binary(BinOp op, const Value& a, const Value& b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  Shape out_shape = broadcast_shape(ta.shape(), tb.shape(), binop_name(op));
  Tensor out(out_shape);

  auto apply = [op](double x, double y) {
    switch (op) {
      case BinOp::Add: return x + y;
      case BinOp::Sub: return x - y;
      case BinOp::Mul: return x * y;
      default: return x / y;
    }
  };

  if (ta.shape() == tb.shape()) {
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = apply(pa[i], pb[i]);
  } else {
    auto sa = broadcast_strides(ta.shape(), out_shape);
    auto sb = broadcast_strides(tb.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t flat, std::size_t ia, std::size_t ib) {
      out[flat] = apply(ta[ia], tb[ib]);
    });
  }

  auto na = a.node();
  auto nb = b.node();
  return make_op(std::move(out), {a, b}, [op, na, nb](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& ta = na->value;
    const Tensor& tb = nb->value;
    auto push = [&](const NodePtr& n, const Tensor& partial) {
      Tensor reduced = reduce_to_shape(partial, n->value.shape());
      Tensor& dst = n->ensure_grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += reduced[i];
    };
    bool need_a = na->requires_grad;
    bool need_b = nb->requires_grad;
    if (!need_a && !need_b) return;
    Tensor pa(need_a ? g.shape() : Shape{});
    Tensor pb(need_b ? g.shape() : Shape{});
    auto sa = broadcast_strides(ta.shape(), g.shape());
    auto sb = broadcast_strides(tb.shape(), g.shape());
    for_each_broadcast(g.shape(), sa, sb, [&](std::size_t flat, std::size_t ia, std::size_t ib) {
      switch (op) {
        case BinOp::Add:
          if (need_a) pa[flat] = g[flat];
          if (need_b) pb[flat] = g[flat];
          break;
        case BinOp::Sub:
          if (need_a) pa[flat] = g[flat];
          if (need_b) pb[flat] = -g[flat];
          break;
        case BinOp::Mul:
          if (need_a) pa[flat] = g[flat] * tb[ib];
          if (need_b) pb[flat] = g[flat] * ta[ia];
          break;
        case BinOp::Div:
          if (need_a) pa[flat] = g[flat] / tb[ib];
          if (need_b) pb[flat] = -g[flat] * ta[ia] / (tb[ib] * tb[ib]);
          break;
      }
    });
    if (need_a) push(na, pa);
    if (need_b) push(nb, pb);
  });
}

}  // namespace detail

inline Value add(const Value& a, const Value& b) { return detail::binary(detail::BinOp::Add, a, b); }
inline Value sub(const Value& a, const Value& b) { return detail::binary(detail::BinOp::Sub, a, b); }
inline Value mul(const Value& a, const Value& b) { return detail::binary(detail::BinOp::Mul, a, b); }
inline Value div(const Value& a, const Value& b) { return detail::binary(detail::BinOp::Div, a, b); }

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }

inline Value operator+(const Value& a, double s) { return add(a, Value::constant(s)); }
inline Value operator-(const Value& a, double s) { return sub(a, Value::constant(s)); }
inline Value operator*(const Value& a, double s) { return mul(a, Value::constant(s)); }
inline Value operator/(const Value& a, double s) { return div(a, Value::constant(s)); }
inline Value operator+(double s, const Value& a) { return add(Value::constant(s), a); }
inline Value operator-(double s, const Value& a) { return sub(Value::constant(s), a); }
inline Value operator*(double s, const Value& a) { return mul(Value::constant(s), a); }
inline Value operator/(double s, const Value& a) { return div(Value::constant(s), a); }

// ---------------------------------------------------------------------------
// Elementwise unary primitives.
// ---------------------------------------------------------------------------

namespace detail {

// fwd maps x to y; dfd maps (x, y) to dy/dx.
template <class Fwd, class Dfd>
Value unary(const Value& a, Fwd fwd, Dfd dfd) {
  const Tensor& ta = a.val();
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = fwd(ta[i]);
  auto na = a.node();
  return make_op(std::move(out), {a}, [na, dfd](Node& self) {
    if (!na->requires_grad) return;
    Tensor& dst = na->ensure_grad();
    const Tensor& g = self.grad;
    const Tensor& x = na->value;
    const Tensor& y = self.value;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * dfd(x[i], y[i]);
  });
}

}  // namespace detail

inline Value neg(const Value& a) {
  return detail::unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Value operator-(const Value& a) { return neg(a); }

inline Value relu(const Value& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Value exp(const Value& a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Value log(const Value& a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Value sqrt(const Value& a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}

inline Value abs(const Value& a) {
  return detail::unary(a, [](double x) { return std::abs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Value square(const Value& a) {
  return detail::unary(a, [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}

// log(1 + e^x), evaluated stably; derivative is the logistic function.
inline Value softplus(const Value& a) {
  return detail::unary(
      a, [](double x) { return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Value clamp_min(const Value& a, double lo) {
  return detail::unary(a, [lo](double x) { return x < lo ? lo : x; },
                       [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_axes(const Shape& shape, const std::vector<std::size_t>& axes, const char* op) {
  for (auto ax : axes) {
    if (ax >= shape.size()) {
      throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(ax) +
                                  " out of range for shape " + shape_str(shape));
    }
  }
}

}  // namespace detail

// Sum over the given axes. keepdims retains reduced axes with extent 1.
inline Value sum(const Value& a, const std::vector<std::size_t>& axes, bool keepdims = false) {
  const Tensor& ta = a.val();
  detail::check_axes(ta.shape(), axes, "sum");
  std::vector<bool> reduced(ta.rank(), false);
  for (auto ax : axes) reduced[ax] = true;

  Shape kept_shape(ta.rank());
  for (std::size_t d = 0; d < ta.rank(); ++d) kept_shape[d] = reduced[d] ? 1 : ta.shape()[d];

  Tensor out(kept_shape);
  auto strides = detail::broadcast_strides(kept_shape, ta.shape());
  std::vector<std::size_t> zero(ta.rank(), 0);
  detail::for_each_broadcast(ta.shape(), strides, zero,
                             [&](std::size_t flat, std::size_t io, std::size_t) { out[io] += ta[flat]; });

  Shape final_shape;
  if (keepdims) {
    final_shape = kept_shape;
  } else {
    for (std::size_t d = 0; d < ta.rank(); ++d) {
      if (!reduced[d]) final_shape.push_back(ta.shape()[d]);
    }
    if (final_shape.empty()) final_shape = {1};
    out = Tensor(final_shape, std::move(out.vec()));
  }

  auto na = a.node();
  return make_op(std::move(out), {a}, [na, kept_shape](detail::Node& self) {
    if (!na->requires_grad) return;
    Tensor& dst = na->ensure_grad();
    const Tensor& g = self.grad;
    auto strides = detail::broadcast_strides(kept_shape, dst.shape());
    std::vector<std::size_t> zero(dst.shape().size(), 0);
    detail::for_each_broadcast(dst.shape(), strides, zero,
                               [&](std::size_t flat, std::size_t ig, std::size_t) { dst[flat] += g[ig]; });
  });
}

inline Value sum(const Value& a) {
  std::vector<std::size_t> axes(a.shape().size());
  for (std::size_t d = 0; d < axes.size(); ++d) axes[d] = d;
  return sum(a, axes, false);
}

inline Value mean(const Value& a, const std::vector<std::size_t>& axes, bool keepdims = false) {
  std::size_t n = 1;
  for (auto ax : axes) n *= a.shape().at(ax);
  return sum(a, axes, keepdims) * (1.0 / static_cast<double>(n));
}

inline Value mean(const Value& a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Shape primitives.
// ---------------------------------------------------------------------------

inline Value reshape(const Value& a, Shape new_shape) {
  if (shape_size(new_shape) != a.size()) {
    throw std::invalid_argument("reshape: size mismatch " + shape_str(a.shape()) + " -> " +
                                shape_str(new_shape));
  }
  Tensor out(new_shape, a.val().vec());
  auto na = a.node();
  return make_op(std::move(out), {a}, [na](detail::Node& self) {
    if (!na->requires_grad) return;
    Tensor& dst = na->ensure_grad();
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  });
}

// Slice [start, start+len) along one axis.
inline Value slice(const Value& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor& ta = a.val();
  if (axis >= ta.rank() || start + len > ta.shape()[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") invalid for axis " +
                                std::to_string(axis) + " of " + shape_str(ta.shape()));
  }
  Shape out_shape = ta.shape();
  out_shape[axis] = len;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ta.shape()[d];
  for (std::size_t d = axis + 1; d < ta.rank(); ++d) inner *= ta.shape()[d];
  const std::size_t in_axis = ta.shape()[axis];

  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      const double* src = ta.data() + (o * in_axis + start + j) * inner;
      double* dst = out.data() + (o * len + j) * inner;
      std::copy(src, src + inner, dst);
    }
  }

  auto na = a.node();
  return make_op(std::move(out), {a}, [na, axis, start, len, outer, inner, in_axis](detail::Node& self) {
    if (!na->requires_grad) return;
    Tensor& dst = na->ensure_grad();
    const Tensor& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < len; ++j) {
        const double* src = g.data() + (o * len + j) * inner;
        double* d = dst.data() + (o * in_axis + start + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) d[i] += src[i];
      }
    }
  });
}

inline Value concat(const std::vector<Value>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& base = parts[0].shape();
  Shape out_shape = base;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != base.size()) {
      throw std::invalid_argument("concat: rank mismatch " + shape_str(base) + " vs " + shape_str(s));
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != base[d]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_str(base) + " vs " +
                                    shape_str(s) + " on axis " + std::to_string(d));
      }
    }
    total += s[axis];
  }
  out_shape[axis] = total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= base[d];
  for (std::size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

  Tensor out(out_shape);
  std::vector<std::size_t> offsets(parts.size());
  {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = off;
      const Tensor& tp = parts[p].val();
      const std::size_t ext = tp.shape()[axis];
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = tp.data() + o * ext * inner;
        double* dst = out.data() + (o * total + off) * inner;
        std::copy(src, src + ext * inner, dst);
      }
      off += ext;
    }
  }

  std::vector<detail::NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op(std::move(out), parts, [nodes, offsets, axis, outer, inner, total](detail::Node& self) {
    const Tensor& g = self.grad;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (!nodes[p]->requires_grad) continue;
      Tensor& dst = nodes[p]->ensure_grad();
      const std::size_t ext = nodes[p]->value.shape()[axis];
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = g.data() + (o * total + offsets[p]) * inner;
        double* d = dst.data() + o * ext * inner;
        for (std::size_t i = 0; i < ext * inner; ++i) d[i] += src[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Composites used throughout the losses.
// ---------------------------------------------------------------------------

// L2 norm along one axis: sqrt(sum(x^2, axis)).
inline Value l2_norm(const Value& a, std::size_t axis, bool keepdims = false) {
  return sqrt(sum(square(a), {axis}, keepdims));
}

}  // namespace poseadapt
