#pragma once

#include "nvc/conv.hpp"

namespace nvc {

// Multi-scale structural similarity on unscaled [0,255] pixels.
//
// Pinned conventions (shared with the independent test reference):
//   - 5 scales, 2x average-pool between scales, floor truncation
//   - Gaussian window 11x11 sigma 1.5, valid filtering; the window shrinks
//     to min(11, min(H,W)) at tiny scales and is rebuilt + renormalized
//   - C1 = (0.01*255)^2, C2 = (0.03*255)^2
//   - contrast-structure term at every scale, luminance at the coarsest
//   - scale weights [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]
//   - one MS-SSIM value per (frame, channel) pair, arithmetic mean at the end
//
// Per-scale means are clamped to >= 1e-6 instead of 0 so the fractional
// powers keep finite gradients; the clamp only binds for catastrophically
// dissimilar inputs.

template <typename S>
constexpr S kMsWeights[5] = {S(0.0448), S(0.2856), S(0.3001), S(0.2363), S(0.1333)};
template <typename S>
constexpr S kMsC1 = S(6.5025);
template <typename S>
constexpr S kMsC2 = S(58.5225);

template <typename S>
std::vector<S> gaussian_window(int n, double sigma = 1.5) {
  std::vector<S> k(n);
  double c = (n - 1) / 2.0, sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = i - c;
    double v = std::exp(-d * d / (2.0 * sigma * sigma));
    k[i] = static_cast<S>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<S>(static_cast<double>(v) / sum);
  return k;
}

namespace detail_ms {

// mean over all axes but dim 0: (N,...) -> (N)
template <typename S>
Var<S> mean_per_dim0(Var<S> x) {
  const Shape& xs = x->value.shape();
  const int n = xs[0];
  const int64_t inner = xs.numel() / n;
  Tensor<S> out(Shape{n});
  for (int i = 0; i < n; ++i) {
    S s = 0;
    const S* p = x->value.data() + static_cast<int64_t>(i) * inner;
    for (int64_t j = 0; j < inner; ++j) s += p[j];
    out[i] = s / static_cast<S>(inner);
  }
  return make_op<S>(std::move(out), {x}, [x, n, inner](Node<S>& nd) {
    if (!x->requires_grad) return;
    for (int i = 0; i < n; ++i) {
      S g = nd.grad[i] / static_cast<S>(inner);
      S* p = x->g().data() + static_cast<int64_t>(i) * inner;
      for (int64_t j = 0; j < inner; ++j) p[j] += g;
    }
  });
}

// weighted mean per sample with a constant weight map; zero-mass samples
// yield the neutral value 1 and receive no gradient
template <typename S>
Var<S> weighted_mean_per_dim0(Var<S> x, const Tensor<S>& w) {
  const Shape& xs = x->value.shape();
  NVC_CHECK(w.shape() == xs, "weighted_mean_per_dim0: weight shape mismatch");
  const int n = xs[0];
  const int64_t inner = xs.numel() / n;
  Tensor<S> out(Shape{n});
  Tensor<S> mass(Shape{n});
  for (int i = 0; i < n; ++i) {
    S s = 0, m = 0;
    const S* p = x->value.data() + static_cast<int64_t>(i) * inner;
    const S* pw = w.data() + static_cast<int64_t>(i) * inner;
    for (int64_t j = 0; j < inner; ++j) {
      s += p[j] * pw[j];
      m += pw[j];
    }
    mass[i] = m;
    out[i] = m > S(0) ? s / m : S(1);
  }
  return make_op<S>(std::move(out), {x}, [x, w, mass, n, inner](Node<S>& nd) {
    if (!x->requires_grad) return;
    for (int i = 0; i < n; ++i) {
      if (!(mass[i] > S(0))) continue;
      S g = nd.grad[i] / mass[i];
      S* p = x->g().data() + static_cast<int64_t>(i) * inner;
      const S* pw = w.data() + static_cast<int64_t>(i) * inner;
      for (int64_t j = 0; j < inner; ++j) p[j] += g * pw[j];
    }
  });
}

}  // namespace detail_ms

template <typename S>
struct MsSsimResult {
  Var<S> full;  // plain MS-SSIM
  Var<S> fg;    // foreground-weighted (only when a mask is given)
  Var<S> bg;    // background-weighted
};

// x, y: (T,C,H,W). mask: optional (T,1,H,W) in {0,1}; similarity maps are
// aggregated under the average-pooled mask, cropped by the window margin.
template <typename S>
MsSsimResult<S> ms_ssim_components(Var<S> x, Var<S> y, const Tensor<S>* mask, int scales = 5) {
  const Shape& xs = x->value.shape();
  NVC_CHECK(xs.rank == 4, "ms_ssim: inputs must be (T,C,H,W)");
  check_same_shape(x, y, "ms_ssim");
  const int t = xs[0], c = xs[1];
  const int n = t * c;
  if (mask != nullptr)
    NVC_CHECK((mask->shape() == Shape{t, 1, xs[2], xs[3]}), "ms_ssim: mask must be (T,1,H,W)");

  Var<S> xv = reshape(x, Shape{n, 1, xs[2], xs[3]});
  Var<S> yv = reshape(y, Shape{n, 1, xs[2], xs[3]});
  Tensor<S> m;  // current-scale mask (T,1,h,w)
  if (mask != nullptr) m = *mask;

  Var<S> prod_full, prod_fg, prod_bg;
  const S eps = S(1e-6);

  for (int s = 0; s < scales; ++s) {
    if (s > 0) {
      xv = avg_pool2d(xv, 2);
      yv = avg_pool2d(yv, 2);
      if (mask != nullptr) {
        NoGradGuard ng;
        m = avg_pool2d(make_const(m), 2)->value;
      }
    }
    const int sh = xv->value.shape()[2], sw = xv->value.shape()[3];
    const int win = std::min(11, std::min(sh, sw));
    std::vector<S> kern = gaussian_window<S>(win);
    auto blur = [&](Var<S> v) { return sep_conv_valid(sep_conv_valid(v, kern, 0), kern, 1); };

    Var<S> mx = blur(xv), my = blur(yv);
    Var<S> sxx = blur(xv * xv) - mx * mx;
    Var<S> syy = blur(yv * yv) - my * my;
    Var<S> sxy = blur(xv * yv) - mx * my;
    Var<S> cs_map = div(add_scalar(mul_scalar(sxy, S(2)), kMsC2<S>),
                        add_scalar(sxx + syy, kMsC2<S>));

    // aggregation weights for fg/bg: pooled mask cropped by the window
    // margin, replicated across channels
    Tensor<S> wfg, wbg;
    if (mask != nullptr) {
      const int crop = (win - 1) / 2;
      const int mh = cs_map->value.shape()[2], mw = cs_map->value.shape()[3];
      wfg = Tensor<S>(Shape{n, 1, mh, mw});
      wbg = Tensor<S>(Shape{n, 1, mh, mw});
      for (int ti = 0; ti < t; ++ti)
        for (int ci = 0; ci < c; ++ci)
          for (int yy = 0; yy < mh; ++yy)
            for (int xx = 0; xx < mw; ++xx) {
              S wv = m.at(ti, 0, yy + crop, xx + crop);
              wfg.at(ti * c + ci, 0, yy, xx) = wv;
              wbg.at(ti * c + ci, 0, yy, xx) = S(1) - wv;
            }
    }

    auto accumulate = [&](Var<S> map, S weight, Var<S>& pf, Var<S>& pfg, Var<S>& pbg) {
      Var<S> term = pow_const(clamp_min(detail_ms::mean_per_dim0(map), eps), weight);
      pf = pf ? pf * term : term;
      if (mask != nullptr) {
        Var<S> tf =
            pow_const(clamp_min(detail_ms::weighted_mean_per_dim0(map, wfg), eps), weight);
        Var<S> tb =
            pow_const(clamp_min(detail_ms::weighted_mean_per_dim0(map, wbg), eps), weight);
        pfg = pfg ? pfg * tf : tf;
        pbg = pbg ? pbg * tb : tb;
      }
    };

    accumulate(cs_map, kMsWeights<S>[s], prod_full, prod_fg, prod_bg);
    if (s == scales - 1) {
      Var<S> l_map = div(add_scalar(mul_scalar(mx * my, S(2)), kMsC1<S>),
                         add_scalar(mx * mx + my * my, kMsC1<S>));
      accumulate(l_map, kMsWeights<S>[s], prod_full, prod_fg, prod_bg);
    }
  }

  MsSsimResult<S> res;
  res.full = mean_all(prod_full);
  if (mask != nullptr) {
    res.fg = mean_all(prod_fg);
    res.bg = mean_all(prod_bg);
  }
  return res;
}

template <typename S>
Var<S> ms_ssim(Var<S> x, Var<S> y, int scales = 5) {
  return ms_ssim_components<S>(x, y, nullptr, scales).full;
}

}  // namespace nvc
