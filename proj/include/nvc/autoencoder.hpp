#pragma once

// Rate-distortion autoencoder backbone.
//
// The encoder maps a video chunk (T, C, H, W) with raw sample values in
// {0..255} to continuous latents (T, K, H/8, W/8); the decoder mirrors it
// with transposed convolutions back to (T, C, H, W).  Two modes share the
// code: frame2D folds time into the batch axis and runs 2D convolutions;
// video3D runs spatio-temporal convolutions over (1, C, T, H, W) with
// stride-1 time (temporal extent 3 for k3 layers, 5 for k5 layers).
//
// Layer stack (encoder):  conv k5 s2 -> BN -> ReLU -> conv k5 s2 -> BN ->
// ReLU -> N residual blocks [conv k3 - BN - ReLU - conv k3 - BN, skip add,
// ReLU] -> conv k3 s2 (K latent channels, no activation).  The decoder is
// the exact mirror; its final transposed convolution has no activation, and
// outputs are clamped to [0, 255] only at export time.

#include <string>
#include <vector>

#include "nvc/nn_layers.hpp"

namespace nvc {

enum class AeMode { kFrame2d, kVideo3d };

inline const char* ae_mode_name(AeMode m) { return m == AeMode::kFrame2d ? "2d" : "3d"; }
inline AeMode ae_mode_from_name(const std::string& s) {
  if (s == "2d") return AeMode::kFrame2d;
  if (s == "3d") return AeMode::kVideo3d;
  throw Error(strcat_("unknown autoencoder mode '", s, "' (expected 2d|3d)"));
}

struct AutoencoderConfig {
  AeMode mode = AeMode::kFrame2d;
  int input_channels = 3;
  int latent_channels = 32;
  int front_channels = 64;    // width after the first k5 conv
  int hidden_channels = 128;  // width of the residual trunk
  int res_blocks = 5;
  static constexpr int kStride = 8;  // three stride-2 stages

  void validate() const {
    NVC_CHECK(input_channels >= 1 && latent_channels >= 1 && front_channels >= 1 &&
                  hidden_channels >= 1 && res_blocks >= 0,
              "bad autoencoder config");
  }
};

template <typename S>
struct Autoencoder {
  // One convolution (or transposed convolution): 2D or 3D depending on mode.
  struct Cv {
    Var<S> w, b;
  };
  struct Block {
    Cv c1, c2;
    BatchNormLayer<S> bn1, bn2;
  };

  AutoencoderConfig cfg;
  Cv e1, e2, e3;  // k5 s2, k5 s2, k3 s2 (to latents)
  BatchNormLayer<S> ebn1, ebn2;
  std::vector<Block> eres;
  Cv d1, d2, d3;  // k3 s2 (from latents), k5 s2, k5 s2 (to pixels)
  BatchNormLayer<S> dbn1, dbn2;
  std::vector<Block> dres;

  Autoencoder(ParamStore<S>& ps, const AutoencoderConfig& c, const std::string& prefix = "ae")
      : cfg(c) {
    cfg.validate();
    const int ci = cfg.input_channels, cf = cfg.front_channels, ch = cfg.hidden_channels;
    const int k = cfg.latent_channels;
    e1 = add_conv(ps, prefix + ".e1", ci, cf, 5, /*transposed=*/false);
    ebn1 = make_batchnorm(ps, prefix + ".ebn1", cf);
    e2 = add_conv(ps, prefix + ".e2", cf, ch, 5, false);
    ebn2 = make_batchnorm(ps, prefix + ".ebn2", ch);
    for (int i = 0; i < cfg.res_blocks; ++i)
      eres.push_back(add_block(ps, strcat_(prefix, ".eres", i), ch));
    e3 = add_conv(ps, prefix + ".e3", ch, k, 3, false);
    d1 = add_conv(ps, prefix + ".d1", k, ch, 3, true);
    dbn1 = make_batchnorm(ps, prefix + ".dbn1", ch);
    for (int i = 0; i < cfg.res_blocks; ++i)
      dres.push_back(add_block(ps, strcat_(prefix, ".dres", i), ch));
    d2 = add_conv(ps, prefix + ".d2", ch, cf, 5, true);
    dbn2 = make_batchnorm(ps, prefix + ".dbn2", cf);
    d3 = add_conv(ps, prefix + ".d3", cf, ci, 5, true);
  }

  // (T, C, H, W) -> (T, K, H/8, W/8); H and W must be divisible by 8.
  Var<S> encode(Var<S> x, bool training) const {
    const Shape& s = x->value.shape();
    NVC_CHECK(s.rank == 4 && s[1] == cfg.input_channels,
              strcat_("encode: expected (T,", cfg.input_channels, ",H,W), got ", s.str()));
    NVC_CHECK(s[2] % AutoencoderConfig::kStride == 0 && s[3] % AutoencoderConfig::kStride == 0,
              strcat_("encode: H,W must be divisible by ", AutoencoderConfig::kStride, ", got ",
                      s.str()));
    Var<S> h = to_net(x);
    h = relu(ebn1(cv(h, e1, 2), training));
    h = relu(ebn2(cv(h, e2, 2), training));
    for (const Block& bl : eres) h = res(h, bl, training);
    Var<S> z = cv(h, e3, 2);
    return from_net(z);
  }

  // (T, K, H/8, W/8) -> (T, C, H, W).
  Var<S> decode(Var<S> z, bool training) const {
    const Shape& s = z->value.shape();
    NVC_CHECK(s.rank == 4 && s[1] == cfg.latent_channels,
              strcat_("decode: expected (T,", cfg.latent_channels, ",h,w), got ", s.str()));
    Var<S> h = to_net(z);
    h = relu(dbn1(cv(h, d1, 2, true), training));
    for (const Block& bl : dres) h = res(h, bl, training);
    h = relu(dbn2(cv(h, d2, 2, true), training));
    Var<S> x = cv(h, d3, 2, true);
    return from_net(x);
  }

 private:
  // Temporal kernel extent for a spatial extent: 3D layers match the spatial
  // size (time is never strided, so extent is free).
  static int kt_of(int k) { return k; }

  Cv add_conv(ParamStore<S>& ps, const std::string& name, int cin, int cout, int k,
              bool transposed) {
    Cv c;
    const int a = transposed ? cin : cout, b = transposed ? cout : cin;
    if (cfg.mode == AeMode::kFrame2d) {
      c.w = ps.add_he(name + ".w", Shape{a, b, k, k}, static_cast<int64_t>(cin) * k * k);
    } else {
      const int kt = kt_of(k);
      c.w = ps.add_he(name + ".w", Shape{a, b, kt, k, k}, static_cast<int64_t>(cin) * kt * k * k);
    }
    c.b = ps.add_zeros(name + ".b", Shape{cout});
    return c;
  }

  Block add_block(ParamStore<S>& ps, const std::string& name, int ch) {
    Block b;
    b.c1 = add_conv(ps, name + ".c1", ch, ch, 3, false);
    b.bn1 = make_batchnorm(ps, name + ".bn1", ch);
    b.c2 = add_conv(ps, name + ".c2", ch, ch, 3, false);
    b.bn2 = make_batchnorm(ps, name + ".bn2", ch);
    return b;
  }

  Var<S> cv(Var<S> x, const Cv& c, int stride, bool transposed = false) const {
    if (cfg.mode == AeMode::kFrame2d)
      return transposed ? tconv2d(x, c.w, c.b, stride, stride)
                        : conv2d(x, c.w, c.b, stride, stride);
    return transposed ? tconv3d(x, c.w, c.b, stride, stride)
                      : conv3d(x, c.w, c.b, stride, stride);
  }

  Var<S> res(Var<S> x, const Block& bl, bool training) const {
    Var<S> h = relu(bl.bn1(cv(x, bl.c1, 1), training));
    h = bl.bn2(cv(h, bl.c2, 1), training);
    return relu(x + h);
  }

  // frame2D treats dim 0 as the batch; video3D runs on (1, C, T, H, W).
  Var<S> to_net(Var<S> x) const {
    if (cfg.mode == AeMode::kFrame2d) return x;
    const Shape& s = x->value.shape();
    return reshape(transpose_01(x), Shape{1, s[1], s[0], s[2], s[3]});
  }

  Var<S> from_net(Var<S> y) const {
    if (cfg.mode == AeMode::kFrame2d) return y;
    const Shape& s = y->value.shape();
    return transpose_01(reshape(y, Shape{s[1], s[2], s[3], s[4]}));
  }
};

}  // namespace nvc
