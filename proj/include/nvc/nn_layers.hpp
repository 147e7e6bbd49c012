#pragma once

#include <map>

#include "nvc/conv.hpp"

namespace nvc {

// ---------------------------------------------------------------------------
// Parameter store: ordered, named, seeded initialization
// ---------------------------------------------------------------------------

// Initialization streams are derived from seed ^ hash(name), so identical
// seeds give identical parameters regardless of construction order.
template <typename S>
struct ParamStore {
  uint64_t seed = 0;
  std::vector<Var<S>> params;
  std::map<std::string, Var<S>> by_name;

  explicit ParamStore(uint64_t seed_) : seed(seed_) {}

  Var<S> add(const std::string& name, Tensor<S> init) {
    NVC_CHECK(!by_name.count(name), strcat_("duplicate parameter name: ", name));
    Var<S> v = make_leaf(std::move(init), name);
    params.push_back(v);
    by_name[name] = v;
    return v;
  }

  // He-style uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
  Var<S> add_he(const std::string& name, const Shape& shape, int64_t fan_in) {
    Rng rng(seed ^ fnv1a64(name));
    double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
    return add(name, rand_uniform<S>(shape, rng, -lim, lim));
  }

  Var<S> add_zeros(const std::string& name, const Shape& shape) {
    return add(name, Tensor<S>(shape));
  }

  Var<S> add_const(const std::string& name, const Shape& shape, S v) {
    return add(name, Tensor<S>(shape, v));
  }

  Var<S> find(const std::string& name) const {
    auto it = by_name.find(name);
    NVC_CHECK(it != by_name.end(), strcat_("unknown parameter: ", name));
    return it->second;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p->value.numel();
    for (const auto& b : buffers) n += b.tensor->numel();
    return n;
  }

  // Non-trainable named state (e.g. batchnorm running statistics). Saved and
  // hashed with the parameters, skipped by the optimizer.
  struct BufferRef {
    std::string name;
    std::shared_ptr<Tensor<S>> tensor;
  };
  std::vector<BufferRef> buffers;

  std::shared_ptr<Tensor<S>> add_buffer(const std::string& name, Tensor<S> init) {
    NVC_CHECK(!by_name.count(name), strcat_("duplicate parameter name: ", name));
    auto t = std::make_shared<Tensor<S>>(std::move(init));
    buffers.push_back({name, t});
    return t;
  }
};

// ---------------------------------------------------------------------------
// Batch normalization (channel axis = dim 1, rank 4 or 5 inputs)
// ---------------------------------------------------------------------------

// training=true normalizes with batch statistics (biased variance) and
// updates running stats in place (running variance stored unbiased);
// training=false normalizes with the running stats but still propagates
// gradients to x/gamma/beta, which is what frozen-stats finetuning needs.
template <typename S>
Var<S> batchnorm(Var<S> x, Var<S> gamma, Var<S> beta, Tensor<S>* run_mean, Tensor<S>* run_var,
                 bool training, S momentum = S(0.1), S eps = S(1e-5)) {
  const Shape& xs = x->value.shape();
  NVC_CHECK(xs.rank >= 3, "batchnorm: input rank must be >= 3");
  const int n = xs[0], c = xs[1];
  NVC_CHECK(gamma->value.numel() == c && beta->value.numel() == c && run_mean != nullptr &&
                run_var != nullptr && run_mean->numel() == c && run_var->numel() == c,
            strcat_("batchnorm: channel mismatch, C=", c));
  int64_t inner = 1;
  for (int i = 2; i < xs.rank; ++i) inner *= xs[i];
  const int64_t m = static_cast<int64_t>(n) * inner;  // samples per channel

  Tensor<S> mean(Shape{c}), invstd(Shape{c});
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      S sum = 0;
      for (int i = 0; i < n; ++i) {
        const S* p = x->value.data() + (static_cast<int64_t>(i) * c + ci) * inner;
        for (int64_t j = 0; j < inner; ++j) sum += p[j];
      }
      S mu = sum / static_cast<S>(m);
      S ss = 0;
      for (int i = 0; i < n; ++i) {
        const S* p = x->value.data() + (static_cast<int64_t>(i) * c + ci) * inner;
        for (int64_t j = 0; j < inner; ++j) {
          S d = p[j] - mu;
          ss += d * d;
        }
      }
      S var = ss / static_cast<S>(m);
      mean[ci] = mu;
      invstd[ci] = S(1) / std::sqrt(var + eps);
      S unbiased = m > 1 ? ss / static_cast<S>(m - 1) : var;
      (*run_mean)[ci] = (S(1) - momentum) * (*run_mean)[ci] + momentum * mu;
      (*run_var)[ci] = (S(1) - momentum) * (*run_var)[ci] + momentum * unbiased;
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = (*run_mean)[ci];
      invstd[ci] = S(1) / std::sqrt((*run_var)[ci] + eps);
    }
  }

  Tensor<S> xhat(xs), out(xs);
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      const S* p = x->value.data() + (static_cast<int64_t>(i) * c + ci) * inner;
      S* ph = xhat.data() + (static_cast<int64_t>(i) * c + ci) * inner;
      S* po = out.data() + (static_cast<int64_t>(i) * c + ci) * inner;
      S mu = mean[ci], is = invstd[ci], ga = gamma->value[ci], be = beta->value[ci];
      for (int64_t j = 0; j < inner; ++j) {
        ph[j] = (p[j] - mu) * is;
        po[j] = ga * ph[j] + be;
      }
    }

  return make_op<S>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat, invstd, training, n, c, inner, m](Node<S>& nd) {
    for (int ci = 0; ci < c; ++ci) {
      // per-channel reductions over the batch
      S sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < n; ++i) {
        const S* gy = nd.grad.data() + (static_cast<int64_t>(i) * c + ci) * inner;
        const S* ph = xhat.data() + (static_cast<int64_t>(i) * c + ci) * inner;
        for (int64_t j = 0; j < inner; ++j) {
          sum_dy += gy[j];
          sum_dy_xhat += gy[j] * ph[j];
        }
      }
      if (gamma->requires_grad) gamma->g()[ci] += sum_dy_xhat;
      if (beta->requires_grad) beta->g()[ci] += sum_dy;
      if (!x->requires_grad) continue;
      S ga = gamma->value[ci], is = invstd[ci];
      if (training) {
        S inv_m = S(1) / static_cast<S>(m);
        for (int i = 0; i < n; ++i) {
          const S* gy = nd.grad.data() + (static_cast<int64_t>(i) * c + ci) * inner;
          const S* ph = xhat.data() + (static_cast<int64_t>(i) * c + ci) * inner;
          S* gx = x->g().data() + (static_cast<int64_t>(i) * c + ci) * inner;
          for (int64_t j = 0; j < inner; ++j)
            gx[j] += ga * is * inv_m *
                     (static_cast<S>(m) * gy[j] - sum_dy - ph[j] * sum_dy_xhat);
        }
      } else {
        for (int i = 0; i < n; ++i) {
          const S* gy = nd.grad.data() + (static_cast<int64_t>(i) * c + ci) * inner;
          S* gx = x->g().data() + (static_cast<int64_t>(i) * c + ci) * inner;
          for (int64_t j = 0; j < inner; ++j) gx[j] += ga * is * gy[j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Gated activation: split channels in half, tanh(first) * sigmoid(second)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> gated_activation(Var<S> x) {
  const Shape& xs = x->value.shape();
  NVC_CHECK(xs.rank >= 2 && xs[1] % 2 == 0,
            strcat_("gated_activation: channel dim must be even, got ", xs.str()));
  const int n = xs[0], c2 = xs[1], c = c2 / 2;
  int64_t inner = 1;
  for (int i = 2; i < xs.rank; ++i) inner *= xs[i];
  Shape os = xs;
  os[1] = c;

  Tensor<S> ta(os), sb(os), out(os);
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      const S* pa = x->value.data() + (static_cast<int64_t>(i) * c2 + ci) * inner;
      const S* pb = x->value.data() + (static_cast<int64_t>(i) * c2 + c + ci) * inner;
      int64_t off = (static_cast<int64_t>(i) * c + ci) * inner;
      for (int64_t j = 0; j < inner; ++j) {
        S t = std::tanh(pa[j]);
        S s = sigmoid_scalar(pb[j]);
        ta[off + j] = t;
        sb[off + j] = s;
        out[off + j] = t * s;
      }
    }

  return make_op<S>(std::move(out), {x}, [x, ta, sb, n, c, c2, inner](Node<S>& nd) {
    if (!x->requires_grad) return;
    for (int i = 0; i < n; ++i)
      for (int ci = 0; ci < c; ++ci) {
        S* ga = x->g().data() + (static_cast<int64_t>(i) * c2 + ci) * inner;
        S* gb = x->g().data() + (static_cast<int64_t>(i) * c2 + c + ci) * inner;
        int64_t off = (static_cast<int64_t>(i) * c + ci) * inner;
        for (int64_t j = 0; j < inner; ++j) {
          S g = nd.grad[off + j], t = ta[off + j], s = sb[off + j];
          ga[j] += g * (S(1) - t * t) * s;
          gb[j] += g * t * s * (S(1) - s);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Convolutional GRU step (graph composite, 3x3 kernels)
// ---------------------------------------------------------------------------

template <typename S>
struct ConvGruWeights {
  Var<S> wu_x, wu_h, bu;  // update gate
  Var<S> wr_x, wr_h, br;  // reset gate
  Var<S> wn_x, wn_h, bn;  // candidate
};

template <typename S>
ConvGruWeights<S> make_conv_gru(ParamStore<S>& ps, const std::string& prefix, int cx, int ch,
                                int k = 3) {
  ConvGruWeights<S> w;
  int64_t fx = static_cast<int64_t>(cx) * k * k, fh = static_cast<int64_t>(ch) * k * k;
  w.wu_x = ps.add_he(prefix + ".wu_x", Shape{ch, cx, k, k}, fx);
  w.wu_h = ps.add_he(prefix + ".wu_h", Shape{ch, ch, k, k}, fh);
  w.bu = ps.add_zeros(prefix + ".bu", Shape{ch});
  w.wr_x = ps.add_he(prefix + ".wr_x", Shape{ch, cx, k, k}, fx);
  w.wr_h = ps.add_he(prefix + ".wr_h", Shape{ch, ch, k, k}, fh);
  w.br = ps.add_zeros(prefix + ".br", Shape{ch});
  w.wn_x = ps.add_he(prefix + ".wn_x", Shape{ch, cx, k, k}, fx);
  w.wn_h = ps.add_he(prefix + ".wn_h", Shape{ch, ch, k, k}, fh);
  w.bn = ps.add_zeros(prefix + ".bn", Shape{ch});
  return w;
}

// u = sig(conv(x) + conv(h)), r = sig(conv(x) + conv(h)),
// n = tanh(conv_x(x) + r * conv_h(h)), h' = (1-u) * h + u * n.
// A strongly negative update-gate bias therefore yields h' = h.
// Reset acts on the hidden-path convolution output ("linear before reset").
template <typename S>
Var<S> conv_gru_step(Var<S> x, Var<S> h, const ConvGruWeights<S>& w) {
  Var<S> zero_u = make_const(Tensor<S>(Shape{static_cast<int>(w.bu->value.numel())}));
  Var<S> u = sigmoid_op(conv2d(x, w.wu_x, w.bu, 1, 1) + conv2d(h, w.wu_h, zero_u, 1, 1));
  Var<S> r = sigmoid_op(conv2d(x, w.wr_x, w.br, 1, 1) + conv2d(h, w.wr_h, zero_u, 1, 1));
  Var<S> cand = tanh_op(conv2d(x, w.wn_x, w.bn, 1, 1) + r * conv2d(h, w.wn_h, zero_u, 1, 1));
  Var<S> one_minus_u = add_scalar(mul_scalar(u, S(-1)), S(1));
  return one_minus_u * h + u * cand;
}

// ---------------------------------------------------------------------------
// Layer bundles
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2dLayer {
  Var<S> w, b;
  int sy = 1, sx = 1;
  Var<S> operator()(Var<S> x) const { return conv2d(x, w, b, sy, sx); }
};

template <typename S>
Conv2dLayer<S> make_conv2d(ParamStore<S>& ps, const std::string& name, int cin, int cout, int k,
                           int stride) {
  Conv2dLayer<S> l;
  l.w = ps.add_he(name + ".w", Shape{cout, cin, k, k}, static_cast<int64_t>(cin) * k * k);
  l.b = ps.add_zeros(name + ".b", Shape{cout});
  l.sy = l.sx = stride;
  return l;
}

template <typename S>
struct TConv2dLayer {
  Var<S> w, b;
  int sy = 1, sx = 1;
  Var<S> operator()(Var<S> x) const { return tconv2d(x, w, b, sy, sx); }
};

template <typename S>
TConv2dLayer<S> make_tconv2d(ParamStore<S>& ps, const std::string& name, int cin, int cout, int k,
                             int stride) {
  TConv2dLayer<S> l;
  l.w = ps.add_he(name + ".w", Shape{cin, cout, k, k}, static_cast<int64_t>(cin) * k * k);
  l.b = ps.add_zeros(name + ".b", Shape{cout});
  l.sy = l.sx = stride;
  return l;
}

template <typename S>
struct Conv3dLayer {
  Var<S> w, b;
  int sy = 1, sx = 1;
  Var<S> operator()(Var<S> x) const { return conv3d(x, w, b, sy, sx); }
};

template <typename S>
Conv3dLayer<S> make_conv3d(ParamStore<S>& ps, const std::string& name, int cin, int cout, int kt,
                           int k, int stride) {
  Conv3dLayer<S> l;
  l.w = ps.add_he(name + ".w", Shape{cout, cin, kt, k, k}, static_cast<int64_t>(cin) * kt * k * k);
  l.b = ps.add_zeros(name + ".b", Shape{cout});
  l.sy = l.sx = stride;
  return l;
}

template <typename S>
struct TConv3dLayer {
  Var<S> w, b;
  int sy = 1, sx = 1;
  Var<S> operator()(Var<S> x) const { return tconv3d(x, w, b, sy, sx); }
};

template <typename S>
TConv3dLayer<S> make_tconv3d(ParamStore<S>& ps, const std::string& name, int cin, int cout, int kt,
                             int k, int stride) {
  TConv3dLayer<S> l;
  l.w = ps.add_he(name + ".w", Shape{cin, cout, kt, k, k}, static_cast<int64_t>(cin) * kt * k * k);
  l.b = ps.add_zeros(name + ".b", Shape{cout});
  l.sy = l.sx = stride;
  return l;
}

// Convolution whose weight is multiplied elementwise by a fixed 0/1 mask
// inside the graph.  Masked slots therefore contribute nothing to the output
// and receive zero gradient, so they stay at their (zero) initialisation.
template <typename S>
Var<S> masked_conv2d(Var<S> x, Var<S> w, Var<S> b, const Tensor<S>& mask) {
  NVC_CHECK(mask.shape() == w->value.shape(), "mask/weight shape mismatch");
  return conv2d(x, mul(w, make_const(mask)), b, 1, 1);
}

template <typename S>
struct BatchNormLayer {
  Var<S> gamma, beta;
  std::shared_ptr<Tensor<S>> run_mean, run_var;
  Var<S> operator()(Var<S> x, bool training) const {
    return batchnorm(x, gamma, beta, run_mean.get(), run_var.get(), training);
  }
};

template <typename S>
BatchNormLayer<S> make_batchnorm(ParamStore<S>& ps, const std::string& name, int c) {
  BatchNormLayer<S> l;
  l.gamma = ps.add_const(name + ".gamma", Shape{c}, S(1));
  l.beta = ps.add_zeros(name + ".beta", Shape{c});
  l.run_mean = ps.add_buffer(name + ".run_mean", Tensor<S>(Shape{c}));
  l.run_var = ps.add_buffer(name + ".run_var", Tensor<S>(Shape{c}, S(1)));
  return l;
}

}  // namespace nvc
