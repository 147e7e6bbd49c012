#pragma once

// Training objective: MS-SSIM distortion, cross-entropy rate under the
// autoregressive prior, the β-weighted total, and the semantic
// (foreground/background-weighted) variants of both.
//
// Rate bookkeeping is in bits (what a coder would pay); inside the total the
// rate term is converted to nats and normalized per pixel, so β sweeps in the
// usual 0.1..0.7 range give a usable rate-distortion spread.

#include <cmath>

#include "nvc/autodiff.hpp"
#include "nvc/msssim.hpp"

namespace nvc {

// Per-group log-softmax over channel blocks of size `l`: channels
// [g*l, (g+1)*l) of each position form one distribution.  Numerically stable
// (max-subtracted); gradient is g_i - p_i * sum_j g_j within each group.
template <typename S>
Var<S> group_log_softmax(Var<S> logits, int l) {
  const Shape& s = logits->value.shape();
  NVC_CHECK(s.rank == 4 && l >= 2 && s[1] % l == 0,
            strcat_("group_log_softmax: bad channels ", s.str(), " for L=", l));
  const int n = s[0], groups = s[1] / l, h = s[2], w = s[3];
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor<S> out(s);
  const S* in = logits->value.data();
  S* o = out.data();
  for (int b = 0; b < n; ++b)
    for (int g = 0; g < groups; ++g)
      for (int64_t p = 0; p < hw; ++p) {
        const int64_t base = ((static_cast<int64_t>(b) * groups + g) * l) * hw + p;
        S m = in[base];
        for (int i = 1; i < l; ++i) m = std::max(m, in[base + i * hw]);
        S acc = S(0);
        for (int i = 0; i < l; ++i) acc += std::exp(in[base + i * hw] - m);
        const S lse = m + std::log(acc);
        for (int i = 0; i < l; ++i) o[base + i * hw] = in[base + i * hw] - lse;
      }
  return make_op<S>(std::move(out), {logits}, [logits, n, groups, l, hw](Node<S>& nd) {
    if (!logits->requires_grad) return;
    const S* lp = nd.value.data();
    const S* gr = nd.grad.data();
    S* dst = logits->g().data();
    for (int b = 0; b < n; ++b)
      for (int g = 0; g < groups; ++g)
        for (int64_t p = 0; p < hw; ++p) {
          const int64_t base = ((static_cast<int64_t>(b) * groups + g) * l) * hw + p;
          S gsum = S(0);
          for (int i = 0; i < l; ++i) gsum += gr[base + i * hw];
          for (int i = 0; i < l; ++i)
            dst[base + i * hw] += gr[base + i * hw] - std::exp(lp[base + i * hw]) * gsum;
        }
  });
}

// Multiplies every channel of x (N,C,H,W) by a fixed per-position plane
// (N,1,H,W).  The plane is data (no gradient).
template <typename S>
Var<S> scale_by_plane(Var<S> x, const Tensor<S>& plane) {
  const Shape& s = x->value.shape();
  const Shape& ps = plane.shape();
  NVC_CHECK(s.rank == 4 && (ps == Shape{s[0], 1, s[2], s[3]}),
            strcat_("scale_by_plane: plane ", ps.str(), " does not match ", s.str()));
  const int n = s[0], c = s[1];
  const int64_t hw = static_cast<int64_t>(s[2]) * s[3];
  Tensor<S> out(s);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p)
        out.data()[(static_cast<int64_t>(b) * c + ch) * hw + p] =
            x->value.data()[(static_cast<int64_t>(b) * c + ch) * hw + p] *
            plane.data()[b * hw + p];
  Tensor<S> pl = plane;
  return make_op<S>(std::move(out), {x}, [x, pl, n, c, hw](Node<S>& nd) {
    if (!x->requires_grad) return;
    S* dst = x->g().data();
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p)
          dst[(static_cast<int64_t>(b) * c + ch) * hw + p] +=
              nd.grad.data()[(static_cast<int64_t>(b) * c + ch) * hw + p] * pl.data()[b * hw + p];
  });
}

// Cross-entropy of one-hot assignments q under group log-probabilities, in
// bits: -sum(q * logp) / ln 2.  Gradient reaches both q (the encoder path)
// and logp (the prior path).
template <typename S>
Var<S> rate_bits(Var<S> q, Var<S> logp) {
  NVC_CHECK(q->value.shape() == logp->value.shape(), "rate_bits: shape mismatch");
  return mul_scalar(sum_all(mul(q, logp)), S(-1) / std::log(S(2)));
}

// Average-pools a binary mask (T,1,H,W) by `factor` to the latent grid and
// maps it to per-position rate weights rho_fg*m + rho_bg*(1-m).
template <typename S>
Tensor<S> rate_weight_plane(const Tensor<S>& mask, int factor, S rho_fg, S rho_bg) {
  const Shape& s = mask.shape();
  NVC_CHECK(s.rank == 4 && s[1] == 1 && s[2] % factor == 0 && s[3] % factor == 0,
            strcat_("rate_weight_plane: bad mask shape ", s.str()));
  const int t = s[0], oh = s[2] / factor, ow = s[3] / factor;
  Tensor<S> w(Shape{t, 1, oh, ow});
  for (int b = 0; b < t; ++b)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        S acc = S(0);
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += mask.at(b, 0, y * factor + dy, x * factor + dx);
        const S m = acc / static_cast<S>(factor * factor);
        w.at(b, 0, y, x) = rho_fg * m + rho_bg * (S(1) - m);
      }
  return w;
}

// Rate in bits with each latent position's contribution scaled by the pooled
// mask weight (groups at one position share the weight).
template <typename S>
Var<S> semantic_rate_bits(Var<S> q, Var<S> logp, const Tensor<S>& weight_plane) {
  NVC_CHECK(q->value.shape() == logp->value.shape(), "semantic_rate_bits: shape mismatch");
  return mul_scalar(sum_all(scale_by_plane(mul(q, logp), weight_plane)),
                    S(-1) / std::log(S(2)));
}

// Everything the trainer needs from one objective evaluation.  The Vars stay
// alive so backward(total) can run; scalar accessors are for logging.
template <typename S>
struct LossBreakdown {
  Var<S> total;       // distortion + beta * rate_nats / pixels
  Var<S> distortion;  // 1 - MS-SSIM (or the alpha-weighted semantic version)
  Var<S> rate;        // bits (weighted bits for the semantic objective)
  int64_t pixels = 0;

  double bits() const { return static_cast<double>(rate->value[0]); }
  double bpp() const { return bits() / static_cast<double>(pixels); }
  double dist() const { return static_cast<double>(distortion->value[0]); }
};

namespace detail_loss {
template <typename S>
Var<S> combine(Var<S> dist, Var<S> bits, S beta, int64_t pixels) {
  // bits -> nats, normalized per pixel.
  Var<S> nats_pp = mul_scalar(bits, std::log(S(2)) / static_cast<S>(pixels));
  return dist + mul_scalar(nats_pp, beta);
}
}  // namespace detail_loss

// Plain objective: (1 - MS-SSIM) + beta * rate.  `q` are the straight-through
// one-hot assignments (T,K*L,h,w), `logits` the prior output of equal shape.
template <typename S>
LossBreakdown<S> total_loss(Var<S> x, Var<S> xhat, Var<S> q, Var<S> logits, int codebook,
                            S beta) {
  const Shape& s = x->value.shape();
  LossBreakdown<S> lb;
  lb.pixels = static_cast<int64_t>(s[0]) * s[2] * s[3];
  lb.distortion = add_scalar(mul_scalar(ms_ssim(x, xhat), S(-1)), S(1));
  lb.rate = rate_bits(q, group_log_softmax(logits, codebook));
  lb.total = detail_loss::combine(lb.distortion, lb.rate, beta, lb.pixels);
  return lb;
}

// Semantic objective (mask (T,1,H,W), entries in {0,1}): distortion is the
// alpha-weighted FG/BG MS-SSIM, rate is weighted per latent position by the
// 8x8-pooled mask (rho_fg on FG, rho_bg on BG).
template <typename S>
struct SemanticLossConfig {
  S alpha = S(0.95);
  S rho_fg = S(0.05);
  S rho_bg = S(0.95);
  int pool_factor = 8;
};

template <typename S>
LossBreakdown<S> semantic_total_loss(Var<S> x, Var<S> xhat, Var<S> q, Var<S> logits, int codebook,
                                     S beta, const Tensor<S>& mask,
                                     const SemanticLossConfig<S>& sc = {}) {
  const Shape& s = x->value.shape();
  LossBreakdown<S> lb;
  lb.pixels = static_cast<int64_t>(s[0]) * s[2] * s[3];
  MsSsimResult<S> ms = ms_ssim_components(x, xhat, &mask);
  Var<S> fg_dist = add_scalar(mul_scalar(ms.fg, S(-1)), S(1));
  Var<S> bg_dist = add_scalar(mul_scalar(ms.bg, S(-1)), S(1));
  lb.distortion = mul_scalar(fg_dist, sc.alpha) + mul_scalar(bg_dist, S(1) - sc.alpha);
  Tensor<S> wp = rate_weight_plane(mask, sc.pool_factor, sc.rho_fg, sc.rho_bg);
  lb.rate = semantic_rate_bits(q, group_log_softmax(logits, codebook), wp);
  lb.total = detail_loss::combine(lb.distortion, lb.rate, beta, lb.pixels);
  return lb;
}

}  // namespace nvc
