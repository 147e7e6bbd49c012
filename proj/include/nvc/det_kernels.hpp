#pragma once

// Deterministic scalar kernels for the bit-exact evaluation paths.
//
// Everything the entropy coder consumes must be reproducible across runs and
// across encode/decode, so these routines fix the floating-point evaluation
// order explicitly: a lane-partitioned dot product with a static reduction
// tree, and a max-subtracted softmax that walks its input exactly once per
// phase.  No autodiff, no Eigen: the compiler must not be free to re-associate
// (the build disables fast-math and FP contraction for this reason).

#include <cmath>
#include <vector>

#include "nvc/tensor.hpp"

namespace nvc {

// Dot product over n floats with a fixed 16-lane accumulation order.
inline float det_dot(const float* __restrict a, const float* __restrict b, int n) {
  constexpr int kLanes = 16;
  float acc[kLanes];
  for (int l = 0; l < kLanes; ++l) acc[l] = 0.0f;
  const int body = n - n % kLanes;
  for (int i = 0; i < body; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  for (int w = kLanes / 2; w >= 1; w /= 2)
    for (int l = 0; l < w; ++l) acc[l] += acc[l + w];
  float s = acc[0];
  for (int i = body; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Stable softmax with a fixed evaluation order; writes n probabilities.
inline void det_softmax(const float* logits, int n, float* pmf) {
  float m = logits[0];
  for (int i = 1; i < n; ++i)
    if (logits[i] > m) m = logits[i];
  float denom = 0.0f;
  for (int i = 0; i < n; ++i) {
    pmf[i] = std::exp(logits[i] - m);
    denom += pmf[i];
  }
  for (int i = 0; i < n; ++i) pmf[i] /= denom;
}

// Channel-last activation plane: contiguous channel vector per (y, x) so the
// per-position dot products hit sequential memory.
struct Plane {
  int h = 0, w = 0, c = 0;
  std::vector<float> v;

  Plane() = default;
  Plane(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, 0.0f) {}
  void zero() { std::fill(v.begin(), v.end(), 0.0f); }
  float* at(int y, int x) { return v.data() + (static_cast<size_t>(y) * w + x) * c; }
  const float* at(int y, int x) const { return v.data() + (static_cast<size_t>(y) * w + x) * c; }
};

// Conv weights repacked tap-major for channel-last evaluation: row(tap, co) is
// the cin-contiguous vector dotted against the input position.  Taps excluded
// by `tap_used` are dropped structurally (never evaluated).
struct PackedConv {
  int kh = 0, kw = 0, cy = 0, cx = 0;  // kernel extent and centre
  int cout = 0, cin = 0;
  std::vector<uint8_t> tap_used;  // kh*kw flags
  std::vector<float> w;           // (tap, cout, cin)
  std::vector<float> b;           // cout (may be empty: no bias)

  const float* row(int tap, int co) const {
    return w.data() + (static_cast<size_t>(tap) * cout + co) * cin;
  }
};

// Repacks (cout, cin, kh, kw) weights; `keep(ky, kx)` selects live taps.
template <typename Keep>
PackedConv pack_conv(const Tensor<float>& w, const Tensor<float>* b, Keep keep) {
  const Shape& s = w.shape();
  NVC_CHECK(s.rank == 4, "pack_conv expects rank-4 weights");
  PackedConv p;
  p.cout = s[0];
  p.cin = s[1];
  p.kh = s[2];
  p.kw = s[3];
  p.cy = (p.kh - 1) / 2;
  p.cx = (p.kw - 1) / 2;
  p.tap_used.assign(static_cast<size_t>(p.kh) * p.kw, 0);
  p.w.assign(static_cast<size_t>(p.kh) * p.kw * p.cout * p.cin, 0.0f);
  for (int ky = 0; ky < p.kh; ++ky)
    for (int kx = 0; kx < p.kw; ++kx) {
      if (!keep(ky, kx)) continue;
      const int tap = ky * p.kw + kx;
      p.tap_used[tap] = 1;
      for (int co = 0; co < p.cout; ++co)
        for (int ci = 0; ci < p.cin; ++ci)
          p.w[(static_cast<size_t>(tap) * p.cout + co) * p.cin + ci] = w.at(co, ci, ky, kx);
    }
  if (b != nullptr) {
    NVC_CHECK(b->shape().rank == 1 && b->shape()[0] == p.cout, "pack_conv bias mismatch");
    p.b.assign(b->data(), b->data() + p.cout);
  }
  return p;
}

// Full same-padded stride-1 conv over a plane (used for conditioning features
// and the recurrent state, where every tap is live).  Taps are visited in
// ascending (ky, kx) order; out-of-bounds taps are skipped.
inline void det_conv_plane(const Plane& in, const PackedConv& p, Plane& out, bool accumulate) {
  NVC_CHECK(in.c == p.cin && out.c == p.cout && in.h == out.h && in.w == out.w,
            "det_conv_plane shape mismatch");
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float* o = out.at(y, x);
      for (int co = 0; co < p.cout; ++co) {
        float acc = p.b.empty() ? 0.0f : p.b[co];
        for (int ky = 0; ky < p.kh; ++ky) {
          const int yy = y + ky - p.cy;
          if (yy < 0 || yy >= in.h) continue;
          for (int kx = 0; kx < p.kw; ++kx) {
            if (!p.tap_used[ky * p.kw + kx]) continue;
            const int xx = x + kx - p.cx;
            if (xx < 0 || xx >= in.w) continue;
            acc += det_dot(p.row(ky * p.kw + kx, co), in.at(yy, xx), p.cin);
          }
        }
        if (accumulate)
          o[co] += acc;
        else
          o[co] = acc;
      }
    }
}

}  // namespace nvc
