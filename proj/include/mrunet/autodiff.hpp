#pragma once

// Define-by-run reverse-mode differentiation. Every op builds a fresh Node
// holding its value and a closure that pushes the node's gradient into its
// parents. Parameters are long-lived leaves; everything else is rebuilt on
// each forward pass.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mrunet/tensor.hpp"

namespace mrunet {

template <Real T>
struct Node;

template <Real T>
using Var = std::shared_ptr<Node<T>>;

template <Real T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until backward reaches this node
  std::string_view op;
  std::vector<Var<T>> parents;
  bool requires_grad = false;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const noexcept { return !grad.empty(); }
  bool is_leaf() const noexcept { return parents.empty(); }

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }

  void zero_grad() { grad = Tensor<T>(); }
};

/// Trainable input (parameter or tensor under a gradient check).
template <Real T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = "leaf";
  n->requires_grad = requires_grad;
  return n;
}

template <Real T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

/// Records decisions taken at non-smooth points (ReLU sign pattern, max-pool
/// argmax) while installed. Gradient checks compare traces of perturbed
/// forwards to stay away from kinks.
class NonsmoothTrace {
 public:
  void mix(std::uint64_t v) noexcept {
    hash_ ^= v;
    hash_ *= 0x100000001b3ULL;
  }
  std::uint64_t hash() const noexcept { return hash_; }

  static NonsmoothTrace*& active() noexcept {
    thread_local NonsmoothTrace* current = nullptr;
    return current;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class ScopedTrace {
 public:
  explicit ScopedTrace(NonsmoothTrace& t) : prev_(NonsmoothTrace::active()) {
    NonsmoothTrace::active() = &t;
  }
  ~ScopedTrace() { NonsmoothTrace::active() = prev_; }
  ScopedTrace(const ScopedTrace&) = delete;
  ScopedTrace& operator=(const ScopedTrace&) = delete;

 private:
  NonsmoothTrace* prev_;
};

namespace detail {

inline void trace_mix(std::uint64_t v) noexcept {
  if (auto* t = NonsmoothTrace::active()) t->mix(v);
}

}  // namespace detail

/// Wraps an op result into a graph node. A non-finite result aborts the op.
/// Nodes with no differentiable parent drop their closure and parents so
/// inference passes do not retain the graph.
template <Real T>
Var<T> make_node(std::string_view op, Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
  if (!value.all_finite()) throw numeric_error(std::string(op) + ": non-finite result");
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

/// Reverse sweep from a one-element root. Leaves accumulate into their
/// existing grad (reset them with zero_grad between steps); interior
/// gradients are released once propagated.
template <Real T>
void backward(const Var<T>& root) {
  if (!root || root->value.size() != 1)
    throw invalid_root_error("backward: root must hold exactly one element");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order)
    if (!n->is_leaf()) n->zero_grad();
  root->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || !n->has_grad()) continue;
    n->backward_fn(*n);
    n->zero_grad();
  }
}

enum class Elementwise { add, sub, mul };

template <Real T>
Var<T> elementwise(Elementwise kind, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value.shape(), b->value.shape(), "elementwise");
  Tensor<T> out(a->value.shape());
  const auto av = a->value.values();
  const auto bv = b->value.values();
  auto ov = out.values();
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
      break;
  }
  const std::string_view tag = kind == Elementwise::add   ? "add"
                               : kind == Elementwise::sub ? "sub"
                                                          : "mul";
  return make_node<T>(tag, std::move(out), {a, b}, [kind](Node<T>& self) {
    const auto g = self.grad.values();
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto ga = pa->grad_buffer().values();
      if (kind == Elementwise::mul) {
        const auto bv = pb->value.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (pb->requires_grad) {
      auto gb = pb->grad_buffer().values();
      if (kind == Elementwise::mul) {
        const auto av = pa->value.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      } else if (kind == Elementwise::sub) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    }
  });
}

template <Real T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return elementwise(Elementwise::add, a, b);
}
template <Real T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return elementwise(Elementwise::sub, a, b);
}
template <Real T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return elementwise(Elementwise::mul, a, b);
}

/// Sum of all elements, shape [1].
template <Real T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x->value.values()) s += v;
  return make_node<T>("sum", Tensor<T>(Shape{1}, s), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    for (auto& v : self.parents[0]->grad_buffer().values()) v += g;
  });
}

template <Real T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * factor;
  return make_node<T>("scale", std::move(out), {x}, [factor](Node<T>& self) {
    auto gx = self.parents[0]->grad_buffer().values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

/// Joins along the last axis; a's channels come first.
template <Real T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a->value.shape();
  const Shape& sb = b->value.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin()))
    throw shape_error("concat_channels: " + shape_string(sa) + " vs " + shape_string(sb));
  const std::size_t ca = sa.back(), cb = sb.back(), cc = ca + cb;
  const std::size_t rows = a->value.size() / ca;
  Shape so = sa;
  so.back() = cc;
  Tensor<T> out(so);
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(pa + r * ca, ca, po + r * cc);
    std::copy_n(pb + r * cb, cb, po + r * cc + ca);
  }
  return make_node<T>("concat", std::move(out), {a, b}, [rows, ca, cb, cc](Node<T>& self) {
    const T* g = self.grad.data();
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      T* ga = pa->grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * cc + c];
    }
    if (pb->requires_grad) {
      T* gb = pb->grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * cc + ca + c];
    }
  });
}

/// Channels [begin, begin+count) of x. Inverse of concat_channels.
template <Real T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Shape& s = x->value.shape();
  const std::size_t c = s.back();
  if (count == 0 || begin + count > c)
    throw shape_error("slice_channels: range out of bounds for " + shape_string(s));
  const std::size_t rows = x->value.size() / c;
  Shape so = s;
  so.back() = count;
  Tensor<T> out(so);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x->value.data() + r * c + begin, count, out.data() + r * count);
  return make_node<T>("slice", std::move(out), {x}, [rows, c, begin, count](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < count; ++k) gx[r * c + begin + k] += self.grad[r * count + k];
  });
}

}  // namespace mrunet
