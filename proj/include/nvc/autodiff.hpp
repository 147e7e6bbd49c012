#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>

#include "nvc/tensor.hpp"

namespace nvc {

// Define-by-run reverse-mode autodiff. Every op returns a Var (shared node);
// calling backward() on a scalar node walks the recorded graph in reverse
// creation order. Graphs are built fresh per step and dropped afterwards.

template <typename S>
struct Node;

template <typename S>
using Var = std::shared_ptr<Node<S>>;

namespace detail {
inline thread_local bool grad_enabled = true;
inline thread_local uint64_t node_counter = 0;
}  // namespace detail

// RAII switch that disables tape recording (eval / coding paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  uint64_t order = 0;
  std::vector<Var<S>> parents;
  std::function<void(Node<S>&)> backward_fn;
  std::string name;  // non-empty for parameters

  explicit Node(Tensor<S> v) : value(std::move(v)), order(detail::node_counter++) {}

  Tensor<S>& g() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<S>(value.shape());
    return grad;
  }
};

// Constant (no gradient tracking).
template <typename S>
Var<S> make_const(Tensor<S> v) {
  return std::make_shared<Node<S>>(std::move(v));
}

// Leaf with gradient (parameters, inputs under test).
template <typename S>
Var<S> make_leaf(Tensor<S> v, std::string name = "") {
  auto n = std::make_shared<Node<S>>(std::move(v));
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

// Op node: tracks parents and a backward closure only while grads are on
// and at least one parent needs them.
template <typename S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backward_fn) {
  auto n = std::make_shared<Node<S>>(std::move(value));
  if (detail::grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return n;
}

// Accumulate t into the node's grad buffer (no-op for non-grad nodes).
template <typename S>
void accum_grad(const Var<S>& node, const Tensor<S>& t) {
  if (!node->requires_grad) return;
  Tensor<S>& g = node->g();
  NVC_CHECK(g.shape() == t.shape(), "gradient shape mismatch");
  g.vec() += t.vec();
}

// Reverse sweep from a scalar root. Seeds d root = 1 and runs recorded
// backward closures in reverse creation order (a valid topological order
// because nodes are immutable once created).
template <typename S>
void backward(const Var<S>& root) {
  NVC_CHECK(root->value.numel() == 1, "backward root must be scalar");
  NVC_CHECK(root->requires_grad, "backward root does not require grad");

  std::vector<Node<S>*> nodes;
  std::unordered_set<Node<S>*> seen;
  std::vector<Node<S>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->order > b->order; });

  root->g()[0] = S(1);
  for (Node<S>* n : nodes)
    if (n->backward_fn) n->backward_fn(*n);
}

// ---------------------------------------------------------------------------
// Elementwise / reduction / shape ops
// ---------------------------------------------------------------------------

template <typename S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  NVC_CHECK(a->value.shape() == b->value.shape(),
            strcat_(op, ": shape mismatch ", a->value.shape().str(), " vs ",
                    b->value.shape().str()));
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  check_same_shape(a, b, "add");
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec() + b->value.vec();
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& n) {
    accum_grad(a, n.grad);
    accum_grad(b, n.grad);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  check_same_shape(a, b, "sub");
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec() - b->value.vec();
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& n) {
    accum_grad(a, n.grad);
    if (b->requires_grad) {
      Tensor<S>& g = b->g();
      g.vec() -= n.grad.vec();
    }
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  check_same_shape(a, b, "mul");
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec().cwiseProduct(b->value.vec());
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad) a->g().vec() += n.grad.vec().cwiseProduct(b->value.vec());
    if (b->requires_grad) b->g().vec() += n.grad.vec().cwiseProduct(a->value.vec());
  });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  check_same_shape(a, b, "div");
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec().cwiseQuotient(b->value.vec());
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad) a->g().vec() += n.grad.vec().cwiseQuotient(b->value.vec());
    if (b->requires_grad) {
      // d(a/b)/db = -a / b^2
      Tensor<S>& g = b->g();
      g.vec() -= n.grad.vec()
                     .cwiseProduct(a->value.vec())
                     .cwiseQuotient(b->value.vec().cwiseProduct(b->value.vec()));
    }
  });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec().array() + c;
  return make_op<S>(std::move(out), {a}, [a](Node<S>& n) { accum_grad(a, n.grad); });
}

template <typename S>
Var<S> mul_scalar(Var<S> a, S c) {
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec() * c;
  return make_op<S>(std::move(out), {a}, [a, c](Node<S>& n) {
    if (a->requires_grad) a->g().vec() += n.grad.vec() * c;
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tensor<S> out(a->value.shape());
  out.vec() = a->value.vec().cwiseMax(S(0));
  return make_op<S>(std::move(out), {a}, [a](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] > S(0)) g[i] += n.grad[i];
  });
}

// max(x, lo); gradient passes only where x > lo (subgradient 0 at the tie)
template <typename S>
Var<S> clamp_min(Var<S> a, S lo) {
  Tensor<S> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] > lo ? a->value[i] : lo;
  return make_op<S>(std::move(out), {a}, [a, lo](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] > lo) g[i] += n.grad[i];
  });
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
  Tensor<S> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a->value[i]);
  auto out_v = out;  // captured copy for backward
  return make_op<S>(std::move(out), {a}, [a, out_v](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (S(1) - out_v[i] * out_v[i]);
  });
}

template <typename S>
Var<S> sigmoid_op(Var<S> a) {
  Tensor<S> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(a->value[i]);
  auto out_v = out;
  return make_op<S>(std::move(out), {a}, [a, out_v](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * out_v[i] * (S(1) - out_v[i]);
  });
}

template <typename S>
Var<S> log_op(Var<S> a) {
  Tensor<S> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a->value[i]);
  return make_op<S>(std::move(out), {a}, [a](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / a->value[i];
  });
}

template <typename S>
Var<S> exp_op(Var<S> a) {
  Tensor<S> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a->value[i]);
  auto out_v = out;
  return make_op<S>(std::move(out), {a}, [a, out_v](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * out_v[i];
  });
}

// x^p for constant p (x > 0 assumed where p is non-integral).
template <typename S>
Var<S> pow_const(Var<S> a, S p) {
  Tensor<S> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::pow(a->value[i], p);
  return make_op<S>(std::move(out), {a}, [a, p](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * p * std::pow(a->value[i], p - S(1));
  });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  Tensor<S> out(Shape{1});
  out[0] = a->value.vec().sum();
  return make_op<S>(std::move(out), {a}, [a](Node<S>& n) {
    if (!a->requires_grad) return;
    a->g().vec().array() += n.grad[0];
  });
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  S inv = S(1) / static_cast<S>(a->value.numel());
  return mul_scalar(sum_all(a), inv);
}

template <typename S>
Var<S> reshape(Var<S> a, const Shape& s) {
  Tensor<S> out = a->value.reshaped(s);
  Shape orig = a->value.shape();
  return make_op<S>(std::move(out), {a}, [a, orig](Node<S>& n) {
    if (a->requires_grad) accum_grad(a, n.grad.reshaped(orig));
  });
}

// Slice of length `len` along axis 0.
template <typename S>
Var<S> slice_dim0(Var<S> a, int start, int len) {
  const Shape& s = a->value.shape();
  NVC_CHECK(start >= 0 && start + len <= s[0], "slice_dim0 out of range");
  Shape os = s;
  os[0] = len;
  int64_t stride = s.numel() / s[0];
  Tensor<S> out(os);
  std::copy_n(a->value.data() + start * stride, len * stride, out.data());
  return make_op<S>(std::move(out), {a}, [a, start, stride, len](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < len * stride; ++i) g[start * stride + i] += n.grad[i];
  });
}

// Swaps axes 0 and 1 (materialized transpose; adjoint is the same swap).
template <typename S>
Var<S> transpose_01(Var<S> a) {
  const Shape& s = a->value.shape();
  NVC_CHECK(s.rank >= 2, "transpose_01 needs rank >= 2");
  int64_t inner = 1;
  for (int i = 2; i < s.rank; ++i) inner *= s[i];
  const int d0 = s[0], d1 = s[1];
  Shape os = s;
  os[0] = d1;
  os[1] = d0;
  Tensor<S> out(os);
  for (int i = 0; i < d0; ++i)
    for (int j = 0; j < d1; ++j)
      std::copy_n(a->value.data() + (static_cast<int64_t>(i) * d1 + j) * inner, inner,
                  out.data() + (static_cast<int64_t>(j) * d0 + i) * inner);
  return make_op<S>(std::move(out), {a}, [a, d0, d1, inner](Node<S>& nd) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int i = 0; i < d0; ++i)
      for (int j = 0; j < d1; ++j) {
        S* dst = g.data() + (static_cast<int64_t>(i) * d1 + j) * inner;
        const S* src = nd.grad.data() + (static_cast<int64_t>(j) * d0 + i) * inner;
        for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
      }
  });
}

// Slice of length `len` along axis 1 (channels).
template <typename S>
Var<S> slice_dim1(Var<S> a, int start, int len) {
  const Shape& s = a->value.shape();
  NVC_CHECK(s.rank >= 2 && start >= 0 && start + len <= s[1], "slice_dim1 out of range");
  int64_t inner = 1;
  for (int i = 2; i < s.rank; ++i) inner *= s[i];
  const int n = s[0], c = s[1];
  Shape os = s;
  os[1] = len;
  Tensor<S> out(os);
  for (int i = 0; i < n; ++i)
    std::copy_n(a->value.data() + (static_cast<int64_t>(i) * c + start) * inner,
                static_cast<int64_t>(len) * inner,
                out.data() + static_cast<int64_t>(i) * len * inner);
  return make_op<S>(std::move(out), {a}, [a, start, len, n, c, inner](Node<S>& nd) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int i = 0; i < n; ++i) {
      S* dst = g.data() + (static_cast<int64_t>(i) * c + start) * inner;
      const S* src = nd.grad.data() + static_cast<int64_t>(i) * len * inner;
      for (int64_t j = 0; j < static_cast<int64_t>(len) * inner; ++j) dst[j] += src[j];
    }
  });
}

// Concatenate along axis 0 (all inputs share trailing dims).
template <typename S>
Var<S> concat_dim0(const std::vector<Var<S>>& xs) {
  NVC_CHECK(!xs.empty(), "concat_dim0: empty input list");
  Shape s0 = xs[0]->value.shape();
  int64_t stride = s0.numel() / s0[0];
  int total = 0;
  for (const auto& x : xs) {
    const Shape& s = x->value.shape();
    NVC_CHECK(s.rank == s0.rank && s.numel() / s[0] == stride,
              "concat_dim0: trailing dims mismatch");
    total += s[0];
  }
  Shape os = s0;
  os[0] = total;
  Tensor<S> out(os);
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy_n(x->value.data(), x->value.numel(), out.data() + off);
    off += x->value.numel();
  }
  std::vector<Var<S>> parents = xs;
  return make_op<S>(std::move(out), parents, [xs](Node<S>& n) {
    int64_t off = 0;
    for (const auto& x : xs) {
      if (x->requires_grad) {
        Tensor<S>& g = x->g();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[off + i];
      }
      off += x->value.numel();
    }
  });
}

// out[t] = x[t-1] along axis 0, out[0] = 0. Used for previous-frame context.
template <typename S>
Var<S> shift_dim0_forward(Var<S> a) {
  const Shape& s = a->value.shape();
  int64_t stride = s.numel() / s[0];
  Tensor<S> out(s);
  std::copy_n(a->value.data(), (s[0] - 1) * stride, out.data() + stride);
  int n0 = s[0];
  return make_op<S>(std::move(out), {a}, [a, stride, n0](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S>& g = a->g();
    for (int64_t i = 0; i < (n0 - 1) * stride; ++i) g[i] += n.grad[stride + i];
  });
}

// Operator sugar (same-shape elementwise).
template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(std::move(a), std::move(b));
}
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(std::move(a), std::move(b));
}
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(std::move(a), std::move(b));
}

}  // namespace nvc
