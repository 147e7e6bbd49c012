#pragma once

#include "nvc/autodiff.hpp"

namespace nvc {

// Strided convolutions with SAME padding: output extent = ceil(in / stride),
// pad_begin = pad_total / 2 (remainder goes to the end). Transposed convs are
// exact adjoints of these maps, so output extent = in * stride.

struct SamePad {
  int out = 0;
  int pad_begin = 0;
};

inline SamePad same_pad(int in, int k, int stride) {
  SamePad p;
  p.out = (in + stride - 1) / stride;
  int total = (p.out - 1) * stride + k - in;
  if (total < 0) total = 0;
  p.pad_begin = total / 2;
  return p;
}

// ---------------------------------------------------------------------------
// 2d conv
// ---------------------------------------------------------------------------

template <typename S>
void im2col_2d(const S* x, int cin, int h, int w, int kh, int kw, int sy, int sx, int pt, int pl,
               int oh, int ow, S* cols) {
  for (int ci = 0; ci < cin; ++ci) {
    const S* xc = x + static_cast<int64_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        S* row = cols + ((static_cast<int64_t>(ci) * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * sy - pt + ky;
          if (iy < 0 || iy >= h) {
            std::fill_n(row + static_cast<int64_t>(oy) * ow, ow, S(0));
            continue;
          }
          const S* xrow = xc + static_cast<int64_t>(iy) * w;
          S* orow = row + static_cast<int64_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * sx - pl + kx;
            orow[ox] = (ix >= 0 && ix < w) ? xrow[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add_2d(const S* cols, int cin, int h, int w, int kh, int kw, int sy, int sx, int pt,
                   int pl, int oh, int ow, S* x) {
  for (int ci = 0; ci < cin; ++ci) {
    S* xc = x + static_cast<int64_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const S* row = cols + ((static_cast<int64_t>(ci) * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * sy - pt + ky;
          if (iy < 0 || iy >= h) continue;
          S* xrow = xc + static_cast<int64_t>(iy) * w;
          const S* orow = row + static_cast<int64_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * sx - pl + kx;
            if (ix >= 0 && ix < w) xrow[ix] += orow[ox];
          }
        }
      }
    }
  }
}

// x (N,Cin,H,W), w (Cout,Cin,Kh,Kw), b (Cout) -> (N,Cout,OH,OW)
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, int sy, int sx) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  NVC_CHECK(xs.rank == 4, strcat_("conv2d: input rank ", xs.rank, ", want 4"));
  NVC_CHECK(ws.rank == 4 && ws[1] == xs[1],
            strcat_("conv2d: weight ", ws.str(), " vs input ", xs.str(), " channel mismatch"));
  const int n = xs[0], cin = xs[1], h = xs[2], w_ = xs[3];
  const int cout = ws[0], kh = ws[2], kw = ws[3];
  NVC_CHECK(b->value.numel() == cout, "conv2d: bias size mismatch");
  SamePad py = same_pad(h, kh, sy), px = same_pad(w_, kw, sx);
  const int oh = py.out, ow = px.out;
  const int64_t krows = static_cast<int64_t>(cin) * kh * kw;

  Tensor<S> out(Shape{n, cout, oh, ow});
  Tensor<S> cols(Shape{static_cast<int>(krows), oh * ow});
  for (int i = 0; i < n; ++i) {
    im2col_2d(x->value.data() + static_cast<int64_t>(i) * cin * h * w_, cin, h, w_, kh, kw, sy, sx,
              py.pad_begin, px.pad_begin, oh, ow, cols.data());
    auto om = typename Tensor<S>::MatMap(out.data() + static_cast<int64_t>(i) * cout * oh * ow,
                                         cout, static_cast<int64_t>(oh) * ow);
    om.noalias() = w->value.mat(cout, krows) * cols.mat(krows, static_cast<int64_t>(oh) * ow);
    for (int co = 0; co < cout; ++co) om.row(co).array() += b->value[co];
  }

  int pt = py.pad_begin, pl = px.pad_begin;
  return make_op<S>(std::move(out), {x, w, b}, [=](Node<S>& nd) {
    Tensor<S> cols(Shape{static_cast<int>(krows), oh * ow});
    for (int i = 0; i < n; ++i) {
      auto gm = typename Tensor<S>::ConstMatMap(
          nd.grad.data() + static_cast<int64_t>(i) * cout * oh * ow, cout,
          static_cast<int64_t>(oh) * ow);
      if (w->requires_grad || b->requires_grad) {
        im2col_2d(x->value.data() + static_cast<int64_t>(i) * cin * h * w_, cin, h, w_, kh, kw, sy,
                  sx, pt, pl, oh, ow, cols.data());
        if (w->requires_grad)
          w->g().mat(cout, krows).noalias() +=
              gm * cols.mat(krows, static_cast<int64_t>(oh) * ow).transpose();
        if (b->requires_grad)
          for (int co = 0; co < cout; ++co) b->g()[co] += gm.row(co).sum();
      }
      if (x->requires_grad) {
        cols.mat(krows, static_cast<int64_t>(oh) * ow).noalias() =
            w->value.mat(cout, krows).transpose() * gm;
        col2im_add_2d(cols.data(), cin, h, w_, kh, kw, sy, sx, pt, pl, oh, ow,
                      x->g().data() + static_cast<int64_t>(i) * cin * h * w_);
      }
    }
  });
}

// Transposed 2d conv: adjoint of conv2d with the same kernel/stride geometry.
// x (N,Cin,H,W), w (Cin,Cout,Kh,Kw), b (Cout) -> (N,Cout,H*sy,W*sx)
template <typename S>
Var<S> tconv2d(Var<S> x, Var<S> w, Var<S> b, int sy, int sx) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  NVC_CHECK(xs.rank == 4 && ws.rank == 4 && ws[0] == xs[1],
            strcat_("tconv2d: weight ", ws.str(), " vs input ", xs.str()));
  const int n = xs[0], cin = xs[1], h = xs[2], w_ = xs[3];
  const int cout = ws[1], kh = ws[2], kw = ws[3];
  NVC_CHECK(b->value.numel() == cout, "tconv2d: bias size mismatch");
  const int th = h * sy, tw = w_ * sx;  // output extents
  // Geometry of the conv being transposed: (th, tw) -> (h, w_).
  SamePad py = same_pad(th, kh, sy), px = same_pad(tw, kw, sx);
  NVC_CHECK(py.out == h && px.out == w_, "tconv2d: inconsistent geometry");
  const int64_t krows = static_cast<int64_t>(cout) * kh * kw;
  const int pt = py.pad_begin, pl = px.pad_begin;

  Tensor<S> out(Shape{n, cout, th, tw});
  Tensor<S> cols(Shape{static_cast<int>(krows), h * w_});
  for (int i = 0; i < n; ++i) {
    auto xm = typename Tensor<S>::ConstMatMap(
        x->value.data() + static_cast<int64_t>(i) * cin * h * w_, cin,
        static_cast<int64_t>(h) * w_);
    cols.mat(krows, static_cast<int64_t>(h) * w_).noalias() =
        w->value.mat(cin, krows).transpose() * xm;
    S* oi = out.data() + static_cast<int64_t>(i) * cout * th * tw;
    col2im_add_2d(cols.data(), cout, th, tw, kh, kw, sy, sx, pt, pl, h, w_, oi);
    for (int co = 0; co < cout; ++co) {
      S* oc = oi + static_cast<int64_t>(co) * th * tw;
      for (int64_t j = 0; j < static_cast<int64_t>(th) * tw; ++j) oc[j] += b->value[co];
    }
  }

  return make_op<S>(std::move(out), {x, w, b}, [=](Node<S>& nd) {
    Tensor<S> cols(Shape{static_cast<int>(krows), h * w_});
    for (int i = 0; i < n; ++i) {
      const S* gi = nd.grad.data() + static_cast<int64_t>(i) * cout * th * tw;
      im2col_2d(gi, cout, th, tw, kh, kw, sy, sx, pt, pl, h, w_, cols.data());
      if (x->requires_grad) {
        auto xg = typename Tensor<S>::MatMap(x->g().data() + static_cast<int64_t>(i) * cin * h * w_,
                                             cin, static_cast<int64_t>(h) * w_);
        xg.noalias() += w->value.mat(cin, krows) * cols.mat(krows, static_cast<int64_t>(h) * w_);
      }
      if (w->requires_grad) {
        auto xm = typename Tensor<S>::ConstMatMap(
            x->value.data() + static_cast<int64_t>(i) * cin * h * w_, cin,
            static_cast<int64_t>(h) * w_);
        w->g().mat(cin, krows).noalias() +=
            xm * cols.mat(krows, static_cast<int64_t>(h) * w_).transpose();
      }
      if (b->requires_grad) {
        for (int co = 0; co < cout; ++co) {
          const S* gc = gi + static_cast<int64_t>(co) * th * tw;
          S s = 0;
          for (int64_t j = 0; j < static_cast<int64_t>(th) * tw; ++j) s += gc[j];
          b->g()[co] += s;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// 3d conv (time axis never strided; kernels odd in time, symmetric pad)
// ---------------------------------------------------------------------------

template <typename S>
void im2col_3d(const S* x, int cin, int t, int h, int w, int kt, int kh, int kw, int sy, int sx,
               int pt0, int pt, int pl, int ot, int oh, int ow, S* cols) {
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    const S* xc = x + static_cast<int64_t>(ci) * t * plane;
    for (int kt_ = 0; kt_ < kt; ++kt_) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          S* row = cols + (((static_cast<int64_t>(ci) * kt + kt_) * kh + ky) * kw + kx) *
                              (static_cast<int64_t>(ot) * oh * ow);
          for (int oz = 0; oz < ot; ++oz) {
            int iz = oz - pt0 + kt_;
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * sy - pt + ky;
              S* orow = row + (static_cast<int64_t>(oz) * oh + oy) * ow;
              if (iz < 0 || iz >= t || iy < 0 || iy >= h) {
                std::fill_n(orow, ow, S(0));
                continue;
              }
              const S* xrow = xc + static_cast<int64_t>(iz) * plane + static_cast<int64_t>(iy) * w;
              for (int ox = 0; ox < ow; ++ox) {
                int ix = ox * sx - pl + kx;
                orow[ox] = (ix >= 0 && ix < w) ? xrow[ix] : S(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add_3d(const S* cols, int cin, int t, int h, int w, int kt, int kh, int kw, int sy,
                   int sx, int pt0, int pt, int pl, int ot, int oh, int ow, S* x) {
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    S* xc = x + static_cast<int64_t>(ci) * t * plane;
    for (int kt_ = 0; kt_ < kt; ++kt_) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const S* row = cols + (((static_cast<int64_t>(ci) * kt + kt_) * kh + ky) * kw + kx) *
                                    (static_cast<int64_t>(ot) * oh * ow);
          for (int oz = 0; oz < ot; ++oz) {
            int iz = oz - pt0 + kt_;
            if (iz < 0 || iz >= t) continue;
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * sy - pt + ky;
              if (iy < 0 || iy >= h) continue;
              S* xrow = xc + static_cast<int64_t>(iz) * plane + static_cast<int64_t>(iy) * w;
              const S* orow = row + (static_cast<int64_t>(oz) * oh + oy) * ow;
              for (int ox = 0; ox < ow; ++ox) {
                int ix = ox * sx - pl + kx;
                if (ix >= 0 && ix < w) xrow[ix] += orow[ox];
              }
            }
          }
        }
      }
    }
  }
}

// x (N,Cin,T,H,W), w (Cout,Cin,Kt,Kh,Kw), b (Cout) -> (N,Cout,T,OH,OW)
template <typename S>
Var<S> conv3d(Var<S> x, Var<S> w, Var<S> b, int sy, int sx) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  NVC_CHECK(xs.rank == 5 && ws.rank == 5 && ws[1] == xs[1],
            strcat_("conv3d: weight ", ws.str(), " vs input ", xs.str()));
  const int n = xs[0], cin = xs[1], t = xs[2], h = xs[3], w_ = xs[4];
  const int cout = ws[0], kt = ws[2], kh = ws[3], kw = ws[4];
  NVC_CHECK(kt % 2 == 1, "conv3d: temporal kernel must be odd");
  NVC_CHECK(b->value.numel() == cout, "conv3d: bias size mismatch");
  SamePad py = same_pad(h, kh, sy), px = same_pad(w_, kw, sx);
  const int oh = py.out, ow = px.out, ot = t, pt0 = (kt - 1) / 2;
  const int64_t krows = static_cast<int64_t>(cin) * kt * kh * kw;
  const int64_t ocols = static_cast<int64_t>(ot) * oh * ow;
  const int pt = py.pad_begin, pl = px.pad_begin;

  Tensor<S> out(Shape{n, cout, ot, oh, ow});
  Tensor<S> cols(Shape{static_cast<int>(krows), static_cast<int>(ocols)});
  for (int i = 0; i < n; ++i) {
    im2col_3d(x->value.data() + static_cast<int64_t>(i) * cin * t * h * w_, cin, t, h, w_, kt, kh,
              kw, sy, sx, pt0, pt, pl, ot, oh, ow, cols.data());
    auto om = typename Tensor<S>::MatMap(out.data() + static_cast<int64_t>(i) * cout * ocols, cout,
                                         ocols);
    om.noalias() = w->value.mat(cout, krows) * cols.mat(krows, ocols);
    for (int co = 0; co < cout; ++co) om.row(co).array() += b->value[co];
  }

  return make_op<S>(std::move(out), {x, w, b}, [=](Node<S>& nd) {
    Tensor<S> cols(Shape{static_cast<int>(krows), static_cast<int>(ocols)});
    for (int i = 0; i < n; ++i) {
      auto gm = typename Tensor<S>::ConstMatMap(
          nd.grad.data() + static_cast<int64_t>(i) * cout * ocols, cout, ocols);
      if (w->requires_grad || b->requires_grad) {
        im2col_3d(x->value.data() + static_cast<int64_t>(i) * cin * t * h * w_, cin, t, h, w_, kt,
                  kh, kw, sy, sx, pt0, pt, pl, ot, oh, ow, cols.data());
        if (w->requires_grad)
          w->g().mat(cout, krows).noalias() += gm * cols.mat(krows, ocols).transpose();
        if (b->requires_grad)
          for (int co = 0; co < cout; ++co) b->g()[co] += gm.row(co).sum();
      }
      if (x->requires_grad) {
        cols.mat(krows, ocols).noalias() = w->value.mat(cout, krows).transpose() * gm;
        col2im_add_3d(cols.data(), cin, t, h, w_, kt, kh, kw, sy, sx, pt0, pt, pl, ot, oh, ow,
                      x->g().data() + static_cast<int64_t>(i) * cin * t * h * w_);
      }
    }
  });
}

// x (N,Cin,T,H,W), w (Cin,Cout,Kt,Kh,Kw), b (Cout) -> (N,Cout,T,H*sy,W*sx)
template <typename S>
Var<S> tconv3d(Var<S> x, Var<S> w, Var<S> b, int sy, int sx) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  NVC_CHECK(xs.rank == 5 && ws.rank == 5 && ws[0] == xs[1],
            strcat_("tconv3d: weight ", ws.str(), " vs input ", xs.str()));
  const int n = xs[0], cin = xs[1], t = xs[2], h = xs[3], w_ = xs[4];
  const int cout = ws[1], kt = ws[2], kh = ws[3], kw = ws[4];
  NVC_CHECK(kt % 2 == 1, "tconv3d: temporal kernel must be odd");
  NVC_CHECK(b->value.numel() == cout, "tconv3d: bias size mismatch");
  const int th = h * sy, tw = w_ * sx, pt0 = (kt - 1) / 2;
  SamePad py = same_pad(th, kh, sy), px = same_pad(tw, kw, sx);
  NVC_CHECK(py.out == h && px.out == w_, "tconv3d: inconsistent geometry");
  const int64_t krows = static_cast<int64_t>(cout) * kt * kh * kw;
  const int64_t icols = static_cast<int64_t>(t) * h * w_;
  const int pt = py.pad_begin, pl = px.pad_begin;

  Tensor<S> out(Shape{n, cout, t, th, tw});
  Tensor<S> cols(Shape{static_cast<int>(krows), static_cast<int>(icols)});
  for (int i = 0; i < n; ++i) {
    auto xm = typename Tensor<S>::ConstMatMap(x->value.data() + static_cast<int64_t>(i) * cin * icols,
                                              cin, icols);
    cols.mat(krows, icols).noalias() = w->value.mat(cin, krows).transpose() * xm;
    S* oi = out.data() + static_cast<int64_t>(i) * cout * t * th * tw;
    col2im_add_3d(cols.data(), cout, t, th, tw, kt, kh, kw, sy, sx, pt0, pt, pl, t, h, w_, oi);
    for (int co = 0; co < cout; ++co) {
      S* oc = oi + static_cast<int64_t>(co) * t * th * tw;
      for (int64_t j = 0; j < static_cast<int64_t>(t) * th * tw; ++j) oc[j] += b->value[co];
    }
  }

  return make_op<S>(std::move(out), {x, w, b}, [=](Node<S>& nd) {
    Tensor<S> cols(Shape{static_cast<int>(krows), static_cast<int>(icols)});
    for (int i = 0; i < n; ++i) {
      const S* gi = nd.grad.data() + static_cast<int64_t>(i) * cout * t * th * tw;
      im2col_3d(gi, cout, t, th, tw, kt, kh, kw, sy, sx, pt0, pt, pl, t, h, w_, cols.data());
      if (x->requires_grad) {
        auto xg = typename Tensor<S>::MatMap(x->g().data() + static_cast<int64_t>(i) * cin * icols,
                                             cin, icols);
        xg.noalias() += w->value.mat(cin, krows) * cols.mat(krows, icols);
      }
      if (w->requires_grad) {
        auto xm = typename Tensor<S>::ConstMatMap(
            x->value.data() + static_cast<int64_t>(i) * cin * icols, cin, icols);
        w->g().mat(cin, krows).noalias() += xm * cols.mat(krows, icols).transpose();
      }
      if (b->requires_grad) {
        for (int co = 0; co < cout; ++co) {
          const S* gc = gi + static_cast<int64_t>(co) * t * th * tw;
          S s = 0;
          for (int64_t j = 0; j < static_cast<int64_t>(t) * th * tw; ++j) s += gc[j];
          b->g()[co] += s;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling and fixed-kernel separable valid convs (metric machinery)
// ---------------------------------------------------------------------------

// Non-overlapping k x k average pooling, floor truncation of odd remainders.
template <typename S>
Var<S> avg_pool2d(Var<S> x, int k) {
  const Shape& xs = x->value.shape();
  NVC_CHECK(xs.rank == 4, "avg_pool2d: input rank must be 4");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int oh = h / k, ow = w / k;
  NVC_CHECK(oh > 0 && ow > 0, strcat_("avg_pool2d: input ", xs.str(), " smaller than k=", k));
  Tensor<S> out(Shape{n, c, oh, ow});
  const S inv = S(1) / static_cast<S>(k * k);
  for (int i = 0; i < n * c; ++i) {
    const S* xi = x->value.data() + static_cast<int64_t>(i) * h * w;
    S* oi = out.data() + static_cast<int64_t>(i) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        S s = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) s += xi[(oy * k + dy) * w + ox * k + dx];
        oi[oy * ow + ox] = s * inv;
      }
  }
  return make_op<S>(std::move(out), {x}, [=](Node<S>& nd) {
    if (!x->requires_grad) return;
    for (int i = 0; i < n * c; ++i) {
      const S* gi = nd.grad.data() + static_cast<int64_t>(i) * oh * ow;
      S* xg = x->g().data() + static_cast<int64_t>(i) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S g = gi[oy * ow + ox] * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) xg[(oy * k + dy) * w + ox * k + dx] += g;
        }
    }
  });
}

// Valid 1d correlation along one spatial axis with a fixed (non-learned)
// kernel; axis 0 = rows (height shrinks), axis 1 = cols (width shrinks).
template <typename S>
Var<S> sep_conv_valid(Var<S> x, const std::vector<S>& kern, int axis) {
  const Shape& xs = x->value.shape();
  NVC_CHECK(xs.rank == 4, "sep_conv_valid: input rank must be 4");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int k = static_cast<int>(kern.size());
  const int oh = axis == 0 ? h - k + 1 : h;
  const int ow = axis == 1 ? w - k + 1 : w;
  NVC_CHECK(oh > 0 && ow > 0, strcat_("sep_conv_valid: kernel ", k, " exceeds input ", xs.str()));
  Tensor<S> out(Shape{n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const S* xi = x->value.data() + static_cast<int64_t>(i) * h * w;
    S* oi = out.data() + static_cast<int64_t>(i) * oh * ow;
    if (axis == 0) {
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S s = 0;
          for (int j = 0; j < k; ++j) s += kern[j] * xi[(oy + j) * w + ox];
          oi[oy * ow + ox] = s;
        }
    } else {
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S s = 0;
          for (int j = 0; j < k; ++j) s += kern[j] * xi[oy * w + ox + j];
          oi[oy * ow + ox] = s;
        }
    }
  }
  return make_op<S>(std::move(out), {x}, [=](Node<S>& nd) {
    if (!x->requires_grad) return;
    for (int i = 0; i < n * c; ++i) {
      const S* gi = nd.grad.data() + static_cast<int64_t>(i) * oh * ow;
      S* xg = x->g().data() + static_cast<int64_t>(i) * h * w;
      if (axis == 0) {
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox)
            for (int j = 0; j < k; ++j) xg[(oy + j) * w + ox] += kern[j] * gi[oy * ow + ox];
      } else {
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox)
            for (int j = 0; j < k; ++j) xg[oy * w + ox + j] += kern[j] * gi[oy * ow + ox];
      }
    }
  });
}

}  // namespace nvc
