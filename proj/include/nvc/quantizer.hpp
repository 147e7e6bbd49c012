#pragma once

#include "nvc/autodiff.hpp"

namespace nvc {

// Scalar codebook quantization. Latents z (B,K,H,W) are quantized per scalar
// against L shared centers. One-hot assignments use the layout (B,K*L,H,W)
// with the L-simplex of latent channel g occupying channels [g*L, (g+1)*L).

template <typename S>
Tensor<S> uniform_centers(int l, S lo = S(-2), S hi = S(2)) {
  NVC_CHECK(l >= 2, "uniform_centers: need at least two centers");
  Tensor<S> c(Shape{l});
  for (int i = 0; i < l; ++i)
    c[i] = lo + (hi - lo) * static_cast<S>(i) / static_cast<S>(l - 1);
  return c;
}

// Nearest center by absolute distance; ties resolve to the lowest index.
template <typename S>
inline int nearest_center(S z, const S* centers, int l) {
  int best = 0;
  S bd = std::fabs(z - centers[0]);
  for (int i = 1; i < l; ++i) {
    S d = std::fabs(z - centers[i]);
    if (d < bd) {  // strict: first minimum wins
      bd = d;
      best = i;
    }
  }
  return best;
}

template <typename S>
Tensor<int32_t> quantize_hard(const Tensor<S>& z, const Tensor<S>& centers) {
  const int l = static_cast<int>(centers.numel());
  Tensor<int32_t> codes(z.shape());
  for (int64_t i = 0; i < z.numel(); ++i)
    codes[i] = nearest_center(z[i], centers.data(), l);
  return codes;
}

template <typename S>
Tensor<S> dequantize(const Tensor<int32_t>& codes, const Tensor<S>& centers) {
  Tensor<S> out(codes.shape());
  for (int64_t i = 0; i < codes.numel(); ++i) {
    int32_t c = codes[i];
    NVC_CHECK(c >= 0 && c < centers.numel(), strcat_("dequantize: code ", c, " out of range"));
    out[i] = centers[c];
  }
  return out;
}

// Soft assignment q_i = exp(-tau*|z - c_i|) / sum_k exp(-tau*|z - c_k|),
// computed with max subtraction so large tau saturates to a one-hot whose
// argmax matches quantize_hard (first maximum wins ties).
// Output shape: z.shape with an L axis appended.
template <typename S>
Tensor<S> soft_assign(const Tensor<S>& z, const Tensor<S>& centers, S tau) {
  const int l = static_cast<int>(centers.numel());
  Shape os = z.shape();
  NVC_CHECK(os.rank < 5, "soft_assign: input rank must be < 5");
  os.rank += 1;
  os[os.rank - 1] = l;
  Tensor<S> q(os);
  std::vector<S> s(l);
  for (int64_t i = 0; i < z.numel(); ++i) {
    S m = -std::numeric_limits<S>::infinity();
    for (int k = 0; k < l; ++k) {
      s[k] = -tau * std::fabs(z[i] - centers[k]);
      if (s[k] > m) m = s[k];
    }
    S denom = 0;
    for (int k = 0; k < l; ++k) {
      s[k] = std::exp(s[k] - m);
      denom += s[k];
    }
    for (int k = 0; k < l; ++k) q[i * l + k] = s[k] / denom;
  }
  return q;
}

// Straight-through one-hot assignment node.
// forward: hard one-hot (the tau -> inf limit), layout (B,K*L,H,W)
// backward: Jacobian of the tau_soft assignment w.r.t. z and centers
template <typename S>
Var<S> quantize_st(Var<S> z, Var<S> centers, S tau_soft = S(1)) {
  const Shape& zs = z->value.shape();
  NVC_CHECK(zs.rank == 4, "quantize_st: latents must be (B,K,H,W)");
  const int b = zs[0], k = zs[1], h = zs[2], w = zs[3];
  const int l = static_cast<int>(centers->value.numel());
  const int64_t hw = static_cast<int64_t>(h) * w;

  Tensor<S> q(Shape{b, k * l, h, w});
  for (int bi = 0; bi < b; ++bi)
    for (int g = 0; g < k; ++g) {
      const S* zp = z->value.data() + (static_cast<int64_t>(bi) * k + g) * hw;
      S* qp = q.data() + (static_cast<int64_t>(bi) * k * l + static_cast<int64_t>(g) * l) * hw;
      for (int64_t j = 0; j < hw; ++j)
        qp[nearest_center(zp[j], centers->value.data(), l) * hw + j] = S(1);
    }

  return make_op<S>(std::move(q), {z, centers}, [=](Node<S>& nd) {
    std::vector<S> soft(l), sgn(l);
    for (int bi = 0; bi < b; ++bi)
      for (int g = 0; g < k; ++g) {
        const S* zp = z->value.data() + (static_cast<int64_t>(bi) * k + g) * hw;
        const S* gp =
            nd.grad.data() + (static_cast<int64_t>(bi) * k * l + static_cast<int64_t>(g) * l) * hw;
        S* zg = z->requires_grad
                    ? z->g().data() + (static_cast<int64_t>(bi) * k + g) * hw
                    : nullptr;
        for (int64_t j = 0; j < hw; ++j) {
          // soft assignment at tau_soft around the current value
          S m = -std::numeric_limits<S>::infinity();
          for (int i = 0; i < l; ++i) {
            S d = zp[j] - centers->value[i];
            sgn[i] = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
            soft[i] = -tau_soft * std::fabs(d);
            if (soft[i] > m) m = soft[i];
          }
          S denom = 0;
          for (int i = 0; i < l; ++i) {
            soft[i] = std::exp(soft[i] - m);
            denom += soft[i];
          }
          S gdotq = 0;
          for (int i = 0; i < l; ++i) {
            soft[i] /= denom;
            gdotq += gp[i * hw + j] * soft[i];
          }
          // dq_i/dz = q_i * (-tau*sgn_i + tau*sum_k q_k sgn_k); centers get
          // the opposite per-center contribution (translation symmetry).
          for (int i = 0; i < l; ++i) {
            S contrib = soft[i] * (gp[i * hw + j] - gdotq) * tau_soft * sgn[i];
            if (zg) zg[j] -= contrib;
            if (centers->requires_grad) centers->g()[i] += contrib;
          }
        }
      }
  });
}

// Per-group linear lookup: out[b,g,y,x] = sum_l q[b,g*L+l,y,x] * table[l].
// With one-hot q this reproduces table[code] exactly.
template <typename S>
Var<S> group_lookup(Var<S> q, Var<S> table) {
  const Shape& qs = q->value.shape();
  const int l = static_cast<int>(table->value.numel());
  NVC_CHECK(qs.rank == 4 && qs[1] % l == 0,
            strcat_("group_lookup: assignment channels ", qs[1], " not divisible by L=", l));
  const int b = qs[0], k = qs[1] / l, h = qs[2], w = qs[3];
  const int64_t hw = static_cast<int64_t>(h) * w;

  Tensor<S> out(Shape{b, k, h, w});
  for (int bi = 0; bi < b; ++bi)
    for (int g = 0; g < k; ++g) {
      const S* qp =
          q->value.data() + (static_cast<int64_t>(bi) * k * l + static_cast<int64_t>(g) * l) * hw;
      S* op = out.data() + (static_cast<int64_t>(bi) * k + g) * hw;
      for (int64_t j = 0; j < hw; ++j) {
        S s = 0;
        for (int i = 0; i < l; ++i) s += qp[i * hw + j] * table->value[i];
        op[j] = s;
      }
    }

  return make_op<S>(std::move(out), {q, table}, [=](Node<S>& nd) {
    for (int bi = 0; bi < b; ++bi)
      for (int g = 0; g < k; ++g) {
        const S* gp = nd.grad.data() + (static_cast<int64_t>(bi) * k + g) * hw;
        int64_t qoff = (static_cast<int64_t>(bi) * k * l + static_cast<int64_t>(g) * l) * hw;
        if (q->requires_grad) {
          S* qg = q->g().data() + qoff;
          for (int i = 0; i < l; ++i)
            for (int64_t j = 0; j < hw; ++j) qg[i * hw + j] += gp[j] * table->value[i];
        }
        if (table->requires_grad) {
          const S* qp = q->value.data() + qoff;
          for (int i = 0; i < l; ++i) {
            S s = 0;
            for (int64_t j = 0; j < hw; ++j) s += gp[j] * qp[i * hw + j];
            table->g()[i] += s;
          }
        }
      }
  });
}

// One-hot encoding of integer codes in the (B,K*L,H,W) layout (eval paths).
template <typename S>
Tensor<S> codes_to_onehot(const Tensor<int32_t>& codes, int l) {
  const Shape& cs = codes.shape();
  NVC_CHECK(cs.rank == 4, "codes_to_onehot: codes must be (B,K,H,W)");
  const int b = cs[0], k = cs[1], h = cs[2], w = cs[3];
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor<S> q(Shape{b, k * l, h, w});
  for (int bi = 0; bi < b; ++bi)
    for (int g = 0; g < k; ++g) {
      const int32_t* cp = codes.data() + (static_cast<int64_t>(bi) * k + g) * hw;
      S* qp = q.data() + (static_cast<int64_t>(bi) * k * l + static_cast<int64_t>(g) * l) * hw;
      for (int64_t j = 0; j < hw; ++j) {
        NVC_CHECK(cp[j] >= 0 && cp[j] < l, "codes_to_onehot: code out of range");
        qp[static_cast<int64_t>(cp[j]) * hw + j] = S(1);
      }
    }
  return q;
}

}  // namespace nvc
