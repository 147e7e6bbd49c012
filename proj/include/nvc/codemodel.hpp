#pragma once

// Autoregressive prior over quantized latent codes.
//
// The model is a gated PixelCNN over the (K, H, W) code grid of one frame:
// two convolution stacks (a "vertical" stack seeing rows strictly above, and
// a "horizontal" stack seeing columns to the left plus a group-causal centre
// tap), gated tanh*sigmoid activations, residual 1x1 connections on the
// horizontal stack, and a 1x1 output head producing L logits per code group.
// Temporal conditioning is optional: either the embedded codes of the
// previous frame or a convolutional GRU state over all previous frames,
// injected into every layer through a conditioning convolution.
//
// Autoregressive order (fixed everywhere, including the bitstream): frames in
// time order; within a frame raster order over (y, x); within a position code
// groups by ascending index.
//
// Two disjoint execution paths share the weights:
//   * LatentPrior::logits builds the autodiff training graph.  Causality is
//     enforced by multiplying weights with 0/1 masks inside the graph, so the
//     masked slots get zero gradient and stay at their zero initialisation.
//   * PriorEvaluator runs a deterministic scalar core (det_kernels.hpp) that
//     computes one position-group at a time in decode order.  Teacher-forced
//     evaluation, single-position conditionals, encoding and decoding all
//     drive the same core with different symbol sources, so the probabilities
//     seen by the range coder are bit-identical across all of them.

#include <functional>
#include <string>
#include <vector>

#include "nvc/autodiff.hpp"
#include "nvc/conv.hpp"
#include "nvc/det_kernels.hpp"
#include "nvc/nn_layers.hpp"
#include "nvc/quantizer.hpp"
#include "nvc/range_coder.hpp"

namespace nvc {

enum class PriorVariant { kNone, kFrame, kGru };

inline const char* prior_variant_name(PriorVariant v) {
  switch (v) {
    case PriorVariant::kNone: return "none";
    case PriorVariant::kFrame: return "frame";
    case PriorVariant::kGru: return "gru";
  }
  return "none";
}

inline PriorVariant prior_variant_from_name(const std::string& s) {
  if (s == "none") return PriorVariant::kNone;
  if (s == "frame") return PriorVariant::kFrame;
  if (s == "gru") return PriorVariant::kGru;
  throw Error(strcat_("unknown prior variant '", s, "' (expected none|frame|gru)"));
}

struct PriorConfig {
  PriorVariant variant = PriorVariant::kNone;
  int groups = 32;     // code groups K (one symbol per group per position)
  int codebook = 8;    // symbols per group L
  int hidden = 8;      // stack features per group h
  int layers = 4;
  int kernel = 5;      // spatial extent of the stack convolutions
  int cond_kernel = 3; // conditioning convolution extent
  int gru_hidden = 64;

  int stack_c() const { return hidden * groups; }  // features per stack
  int gate_c() const { return 2 * stack_c(); }     // pre-gate channels
  int cond_c() const { return 2 * gate_c(); }      // conditioning output (both stacks)
  int ctx_c() const {
    switch (variant) {
      case PriorVariant::kFrame: return groups;
      case PriorVariant::kGru: return gru_hidden;
      default: return 0;
    }
  }
  void validate() const {
    NVC_CHECK(groups >= 1 && codebook >= 2 && hidden >= 1 && layers >= 1, "bad prior config");
    NVC_CHECK(kernel >= 3 && kernel % 2 == 1, "prior kernel must be odd and >= 3");
    NVC_CHECK(cond_kernel >= 1 && cond_kernel % 2 == 1, "conditioning kernel must be odd");
    NVC_CHECK(variant != PriorVariant::kGru || gru_hidden >= 1, "bad GRU width");
  }
};

// ---------------------------------------------------------------------------
// Causality masks
// ---------------------------------------------------------------------------

// Group id per channel: one channel per group.
inline std::vector<int> unit_groups(int n) {
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) g[i] = i;
  return g;
}

// Group id per channel: consecutive blocks of `per` channels per group.
inline std::vector<int> block_groups(int n, int per) {
  NVC_CHECK(per >= 1 && n % per == 0, "block_groups: channel count not divisible");
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) g[i] = i / per;
  return g;
}

// Group ids of the pre-gate channels: the tanh half followed by the sigmoid
// half, each laid out group-major with `hidden` channels per group.
inline std::vector<int> gate_groups(int hidden, int groups) {
  std::vector<int> half = block_groups(hidden * groups, hidden);
  std::vector<int> g = half;
  g.insert(g.end(), half.begin(), half.end());
  return g;
}

// (cout, cin, k, k) mask keeping only taps in rows strictly above the centre.
template <typename S>
Tensor<S> vertical_stack_mask(int cout, int cin, int k) {
  Tensor<S> m(Shape{cout, cin, k, k});
  const int c = (k - 1) / 2;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < c; ++ky)
        for (int kx = 0; kx < k; ++kx) m.at(co, ci, ky, kx) = S(1);
  return m;
}

// (cout, cin, 1, k) mask for the horizontal stack: columns left of the centre
// are fully connected, the centre column connects input group gi to output
// group go iff gi < go (strict; used where the input is the current
// position's own embedding) or gi <= go (inner layers).
template <typename S>
Tensor<S> horizontal_stack_mask(const std::vector<int>& out_g, const std::vector<int>& in_g,
                                int k, bool strict) {
  const int cout = static_cast<int>(out_g.size()), cin = static_cast<int>(in_g.size());
  Tensor<S> m(Shape{cout, cin, 1, k});
  const int c = (k - 1) / 2;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int kx = 0; kx <= c; ++kx) {
        if (kx == c && !(strict ? in_g[ci] < out_g[co] : in_g[ci] <= out_g[co])) continue;
        m.at(co, ci, 0, kx) = S(1);
      }
  return m;
}

// (cout, cin, 1, 1) group-triangular mask: gi <= go (or gi < go when strict).
template <typename S>
Tensor<S> group_link_mask(const std::vector<int>& out_g, const std::vector<int>& in_g,
                          bool strict) {
  const int cout = static_cast<int>(out_g.size()), cin = static_cast<int>(in_g.size());
  Tensor<S> m(Shape{cout, cin, 1, 1});
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      if (strict ? in_g[ci] < out_g[co] : in_g[ci] <= out_g[co]) m.at(co, ci, 0, 0) = S(1);
  return m;
}

// ---------------------------------------------------------------------------
// Training-graph model
// ---------------------------------------------------------------------------

template <typename S>
struct PriorLayer {
  Var<S> wv, bv;        // vertical stack conv (k x k, masked)
  Var<S> wh, bh;        // horizontal stack conv (1 x k, masked)
  Var<S> wlink, blink;  // 1x1 from pre-gate vertical features into horizontal
  Var<S> wres, bres;    // residual 1x1 on the horizontal stack (layers > 0)
  Var<S> wcond, bcond;  // conditioning conv (only with temporal context)
  Tensor<S> mv, mh, mres;
};

template <typename S>
struct LatentPrior {
  PriorConfig cfg;
  Var<S> embed;  // (L) scalar embedding of each code symbol
  std::vector<PriorLayer<S>> layer;
  Var<S> whead, bhead;
  Tensor<S> mhead;
  ConvGruWeights<S> gru;

  LatentPrior(ParamStore<S>& ps, const PriorConfig& c, const std::string& prefix = "prior")
      : cfg(c) {
    cfg.validate();
    const int k = cfg.kernel, hk = cfg.stack_c(), g2 = cfg.gate_c();
    embed = ps.add(prefix + ".embed", uniform_centers<S>(cfg.codebook));
    layer.resize(cfg.layers);
    for (int li = 0; li < cfg.layers; ++li) {
      PriorLayer<S>& L = layer[li];
      const bool first = li == 0;
      const int cin = first ? cfg.groups : hk;
      const std::vector<int> in_g = first ? unit_groups(cfg.groups) : block_groups(hk, cfg.hidden);
      const std::vector<int> out_g = gate_groups(cfg.hidden, cfg.groups);
      const std::string p = strcat_(prefix, ".l", li);
      L.mv = vertical_stack_mask<S>(g2, cin, k);
      L.mh = horizontal_stack_mask<S>(out_g, in_g, k, /*strict=*/first);
      L.wv = ps.add_he(p + ".wv", Shape{g2, cin, k, k}, static_cast<int64_t>(cin) * k * k);
      L.bv = ps.add_zeros(p + ".bv", Shape{g2});
      L.wh = ps.add_he(p + ".wh", Shape{g2, cin, 1, k}, static_cast<int64_t>(cin) * k);
      L.bh = ps.add_zeros(p + ".bh", Shape{g2});
      L.wlink = ps.add_he(p + ".wlink", Shape{g2, g2, 1, 1}, g2);
      L.blink = ps.add_zeros(p + ".blink", Shape{g2});
      if (!first) {
        L.mres = group_link_mask<S>(block_groups(hk, cfg.hidden), block_groups(hk, cfg.hidden),
                                    /*strict=*/false);
        L.wres = ps.add_he(p + ".wres", Shape{hk, hk, 1, 1}, hk);
        L.bres = ps.add_zeros(p + ".bres", Shape{hk});
      }
      if (cfg.variant != PriorVariant::kNone) {
        const int ck = cfg.cond_kernel;
        L.wcond = ps.add_he(p + ".wcond", Shape{cfg.cond_c(), cfg.ctx_c(), ck, ck},
                            static_cast<int64_t>(cfg.ctx_c()) * ck * ck);
        L.bcond = ps.add_zeros(p + ".bcond", Shape{cfg.cond_c()});
      }
      // Zero the masked slots so both execution paths agree from step zero.
      for (int64_t i = 0; i < L.wv->value.numel(); ++i) L.wv->value.data()[i] *= L.mv.data()[i];
      for (int64_t i = 0; i < L.wh->value.numel(); ++i) L.wh->value.data()[i] *= L.mh.data()[i];
      if (!first)
        for (int64_t i = 0; i < L.wres->value.numel(); ++i)
          L.wres->value.data()[i] *= L.mres.data()[i];
    }
    // Output head starts at zero: an untrained prior assigns the uniform
    // distribution to every symbol, i.e. codes cost exactly log2(L) bits.
    mhead = group_link_mask<S>(block_groups(cfg.groups * cfg.codebook, cfg.codebook),
                               block_groups(hk, cfg.hidden), /*strict=*/false);
    whead = ps.add_zeros(prefix + ".head.w", Shape{cfg.groups * cfg.codebook, hk, 1, 1});
    bhead = ps.add_zeros(prefix + ".head.b", Shape{cfg.groups * cfg.codebook});
    if (cfg.variant == PriorVariant::kGru)
      gru = make_conv_gru(ps, prefix + ".gru", cfg.groups, cfg.gru_hidden, cfg.cond_kernel);
  }

  // Temporal context per frame, derived from the embedded codes (T,K,H,W):
  // the previous frame's embedding, or a GRU state over all previous frames.
  // Frame 0 sees zeros in both cases.  Returns nullptr without conditioning.
  Var<S> context(Var<S> emb) const {
    if (cfg.variant == PriorVariant::kNone) return nullptr;
    if (cfg.variant == PriorVariant::kFrame) return shift_dim0_forward(emb);
    const Shape& es = emb->value.shape();
    Var<S> h = make_const(Tensor<S>(Shape{1, cfg.gru_hidden, es[2], es[3]}));
    std::vector<Var<S>> ctx;
    for (int t = 0; t < es[0]; ++t) {
      ctx.push_back(h);
      h = conv_gru_step(slice_dim0(emb, t, 1), h, gru);
    }
    return concat_dim0(ctx);
  }

  // Logits over the one-hot code assignments q (T, K*L, H, W) -> same shape.
  // Group g's logits live in channels [g*L, (g+1)*L).
  Var<S> logits(Var<S> q) const {
    const Shape& qs = q->value.shape();
    NVC_CHECK(qs.rank == 4 && qs[1] == cfg.groups * cfg.codebook,
              strcat_("prior: expected (T,", cfg.groups * cfg.codebook, ",H,W), got ", qs.str()));
    Var<S> emb = group_lookup(q, embed);
    Var<S> ctx = context(emb);
    Var<S> v = emb, hs = emb;
    for (int li = 0; li < cfg.layers; ++li) {
      const PriorLayer<S>& L = layer[li];
      Var<S> vpre = conv2d(v, mul(L.wv, make_const(L.mv)), L.bv, 1, 1);
      Var<S> link = conv2d(vpre, L.wlink, L.blink, 1, 1);
      Var<S> hpre = conv2d(hs, mul(L.wh, make_const(L.mh)), L.bh, 1, 1) + link;
      if (ctx != nullptr) {
        Var<S> cond = conv2d(ctx, L.wcond, L.bcond, 1, 1);
        vpre = vpre + slice_dim1(cond, 0, cfg.gate_c());
        hpre = hpre + slice_dim1(cond, cfg.gate_c(), cfg.gate_c());
      }
      Var<S> hg = gated_activation(hpre);
      hs = li == 0 ? hg : hs + conv2d(hg, mul(L.wres, make_const(L.mres)), L.bres, 1, 1);
      v = gated_activation(vpre);
    }
    return conv2d(hs, mul(whead, make_const(mhead)), bhead, 1, 1);
  }
};

// ---------------------------------------------------------------------------
// Deterministic evaluator (teacher-forced PMFs, conditionals, codec)
// ---------------------------------------------------------------------------

// Snapshot of the prior weights repacked for the scalar core.  Construct it
// after training / loading; it does not track later weight updates.
class PriorEvaluator {
 public:
  // Called once per symbol in decode order with its PMF; returns the symbol
  // value that is then fed back into the model state.
  using SymbolFn = std::function<int(int t, int g, int y, int x, const float* pmf)>;

  explicit PriorEvaluator(const LatentPrior<float>& m) : cfg_(m.cfg) {
    const int hk = cfg_.stack_c(), g2 = cfg_.gate_c(), kc = (cfg_.kernel - 1) / 2;
    embed_.assign(m.embed->value.data(), m.embed->value.data() + cfg_.codebook);
    lay_.resize(cfg_.layers);
    for (int li = 0; li < cfg_.layers; ++li) {
      const PriorLayer<float>& L = m.layer[li];
      DetLayer& d = lay_[li];
      const bool first = li == 0;
      d.cin = first ? cfg_.groups : hk;
      const std::vector<int> in_g =
          first ? unit_groups(cfg_.groups) : block_groups(hk, cfg_.hidden);
      const std::vector<int> out_g = gate_groups(cfg_.hidden, cfg_.groups);
      d.vconv = pack_conv(L.wv->value, &L.bv->value, [&](int ky, int) { return ky < kc; });
      d.hctx = pack_conv(L.wh->value, nullptr, [&](int, int kx) { return kx < kc; });
      d.hb.assign(L.bh->value.data(), L.bh->value.data() + g2);
      d.hcw.assign(static_cast<size_t>(g2) * d.cin, 0.0f);
      d.hclim = prefix_limits(out_g, in_g, /*strict=*/first);
      for (int co = 0; co < g2; ++co)
        for (int ci = 0; ci < d.hclim[co]; ++ci)
          d.hcw[static_cast<size_t>(co) * d.cin + ci] = L.wh->value.at(co, ci, 0, kc);
      d.link = pack_conv(L.wlink->value, &L.blink->value, [](int, int) { return true; });
      if (!first) {
        const std::vector<int> hg = block_groups(hk, cfg_.hidden);
        d.reslim = prefix_limits(hg, hg, false);
        d.resb.assign(L.bres->value.data(), L.bres->value.data() + hk);
        d.resw.assign(static_cast<size_t>(hk) * hk, 0.0f);
        for (int co = 0; co < hk; ++co)
          for (int ci = 0; ci < d.reslim[co]; ++ci)
            d.resw[static_cast<size_t>(co) * hk + ci] = L.wres->value.at(co, ci, 0, 0);
      }
      if (cfg_.variant != PriorVariant::kNone)
        d.cond = pack_conv(L.wcond->value, &L.bcond->value, [](int, int) { return true; });
    }
    const int kl = cfg_.groups * cfg_.codebook;
    headlim_ = prefix_limits(block_groups(kl, cfg_.codebook), block_groups(hk, cfg_.hidden), false);
    headb_.assign(m.bhead->value.data(), m.bhead->value.data() + kl);
    headw_.assign(static_cast<size_t>(kl) * hk, 0.0f);
    for (int co = 0; co < kl; ++co)
      for (int ci = 0; ci < headlim_[co]; ++ci)
        headw_[static_cast<size_t>(co) * hk + ci] = m.whead->value.at(co, ci, 0, 0);
    if (cfg_.variant == PriorVariant::kGru) {
      auto full = [](int, int) { return true; };
      gux_ = pack_conv(m.gru.wu_x->value, &m.gru.bu->value, full);
      guh_ = pack_conv(m.gru.wu_h->value, nullptr, full);
      grx_ = pack_conv(m.gru.wr_x->value, &m.gru.br->value, full);
      grh_ = pack_conv(m.gru.wr_h->value, nullptr, full);
      gnx_ = pack_conv(m.gru.wn_x->value, &m.gru.bn->value, full);
      gnh_ = pack_conv(m.gru.wn_h->value, nullptr, full);
    }
  }

  const PriorConfig& config() const { return cfg_; }

  // Teacher-forced PMFs for known codes (T,K,H,W) -> (T,K,H,W,L).
  Tensor<float> pmfs(const Tensor<int32_t>& codes) const {
    const Shape& cs = shape_checked(codes);
    Tensor<float> out(Shape{cs[0], cs[1], cs[2], cs[3], cfg_.codebook});
    run_chunk(cs[0], cs[2], cs[3], [&](int t, int g, int y, int x, const float* pmf) {
      std::copy_n(pmf, cfg_.codebook, &out.at(t, g, y, x, 0));
      return static_cast<int>(codes.at(t, g, y, x));
    });
    return out;
  }

  // Total ideal code length of `codes` in bits: sum of -log2 pmf[symbol].
  double ideal_bits(const Tensor<int32_t>& codes) const {
    const Shape& cs = shape_checked(codes);
    double bits = 0.0;
    run_chunk(cs[0], cs[2], cs[3], [&](int t, int g, int y, int x, const float* pmf) {
      const int c = codes.at(t, g, y, x);
      bits -= std::log2(static_cast<double>(pmf[c]));
      return c;
    });
    return bits;
  }

  // PMF of group g at (y, x) of frame t, conditioned on everything that
  // precedes it in decode order.  Codes at or after that point are never
  // read, so their values are irrelevant.
  std::vector<float> conditional_at(const Tensor<int32_t>& codes, int t, int g, int y,
                                    int x) const {
    const Shape& cs = shape_checked(codes);
    NVC_CHECK(t >= 0 && t < cs[0] && g >= 0 && g < cfg_.groups && y >= 0 && y < cs[2] && x >= 0 &&
                  x < cs[3],
              "conditional_at: position out of range");
    std::vector<float> out(cfg_.codebook);
    struct Done {};
    try {
      run_chunk(t + 1, cs[2], cs[3], [&](int tt, int gg, int yy, int xx, const float* pmf) {
        if (tt == t && yy == y && xx == x && gg == g) {
          std::copy_n(pmf, cfg_.codebook, out.begin());
          throw Done{};
        }
        return static_cast<int>(codes.at(tt, gg, yy, xx));
      });
    } catch (const Done&) {
      return out;
    }
    throw Error("conditional_at: target position never reached");
  }

  // Entropy-codes `codes` into `enc` (PMFs quantized per symbol).
  void encode(const Tensor<int32_t>& codes, RangeEncoder& enc) const {
    const Shape& cs = shape_checked(codes);
    run_chunk(cs[0], cs[2], cs[3], [&](int t, int g, int y, int x, const float* pmf) {
      const int c = codes.at(t, g, y, x);
      enc.encode_symbol(quantize_pmf(pmf, cfg_.codebook), c);
      return c;
    });
  }

  // Decodes a (T,K,H,W) code tensor from `dec` (inverse of encode()).
  Tensor<int32_t> decode(int t_frames, int h, int w, RangeDecoder& dec) const {
    Tensor<int32_t> codes(Shape{t_frames, cfg_.groups, h, w});
    run_chunk(t_frames, h, w, [&](int t, int g, int y, int x, const float* pmf) {
      const int c = dec.decode_symbol(quantize_pmf(pmf, cfg_.codebook));
      codes.at(t, g, y, x) = c;
      return c;
    });
    return codes;
  }

 private:
  struct DetLayer {
    PackedConv vconv, hctx, link, cond;
    std::vector<float> hcw, hb;    // centre tap (cout, cin) + bias
    std::vector<int> hclim;        // centre-tap input-channel limit per cout
    std::vector<float> resw, resb; // residual 1x1 (layers > 0)
    std::vector<int> reslim;
    int cin = 0;
  };

  // Per-frame working state.  All reads respect decode order: a slot is read
  // only after the core has written it (enforced by the prefix limits and
  // the strictly-causal tap sets), so stale zeros are never observed.
  struct FrameState {
    Plane emb, emb_prev;            // (H,W,K) embedded codes
    Plane gru_h;                    // (H,W,gru_hidden)
    Plane g_ux, g_uh, g_rx, g_rh, g_nx, g_nh;
    std::vector<Plane> cond;        // per layer (H,W,4hK)
    std::vector<Plane> vraw, link;  // per layer (H,W,2hK): pre-gate vertical, link
    std::vector<Plane> vout, hout;  // per layer (H,W,hK)
    std::vector<std::vector<float>> hgated;  // per layer, current position
    std::vector<float> pre_t, pre_s, logit;
  };

  static const Shape& shape_checked(const Tensor<int32_t>& codes) {
    const Shape& cs = codes.shape();
    NVC_CHECK(cs.rank == 4, "prior codes must be (T,K,H,W)");
    return cs;
  }

  // Number of input channels whose group precedes (or equals, unless strict)
  // the output channel's group.  Input group ids must be non-decreasing so
  // the allowed set is a prefix.
  static std::vector<int> prefix_limits(const std::vector<int>& out_g,
                                        const std::vector<int>& in_g, bool strict) {
    for (size_t i = 1; i < in_g.size(); ++i)
      NVC_CHECK(in_g[i - 1] <= in_g[i], "prefix_limits: input groups not sorted");
    std::vector<int> lim(out_g.size());
    for (size_t co = 0; co < out_g.size(); ++co) {
      int n = 0;
      while (n < static_cast<int>(in_g.size()) &&
             (strict ? in_g[n] < out_g[co] : in_g[n] <= out_g[co]))
        ++n;
      lim[co] = n;
    }
    return lim;
  }

  void init_state(FrameState& st, int h, int w) const {
    const int hk = cfg_.stack_c(), g2 = cfg_.gate_c();
    st.emb = Plane(h, w, cfg_.groups);
    st.emb_prev = Plane(h, w, cfg_.groups);
    if (cfg_.variant == PriorVariant::kGru) {
      st.gru_h = Plane(h, w, cfg_.gru_hidden);
      for (Plane* p : {&st.g_ux, &st.g_uh, &st.g_rx, &st.g_rh, &st.g_nx, &st.g_nh})
        *p = Plane(h, w, cfg_.gru_hidden);
    }
    st.cond.clear();
    st.vraw.clear();
    st.link.clear();
    st.vout.clear();
    st.hout.clear();
    st.hgated.assign(cfg_.layers, std::vector<float>(hk, 0.0f));
    for (int li = 0; li < cfg_.layers; ++li) {
      if (cfg_.variant != PriorVariant::kNone) st.cond.emplace_back(h, w, cfg_.cond_c());
      st.vraw.emplace_back(h, w, g2);
      st.link.emplace_back(h, w, g2);
      st.vout.emplace_back(h, w, hk);
      st.hout.emplace_back(h, w, hk);
    }
    st.pre_t.assign(cfg_.hidden, 0.0f);
    st.pre_s.assign(cfg_.hidden, 0.0f);
    st.logit.assign(cfg_.codebook, 0.0f);
  }

  // Advances the recurrent context with the embedded previous frame.
  void gru_step(FrameState& st) const {
    det_conv_plane(st.emb_prev, gux_, st.g_ux, false);
    det_conv_plane(st.gru_h, guh_, st.g_uh, false);
    det_conv_plane(st.emb_prev, grx_, st.g_rx, false);
    det_conv_plane(st.gru_h, grh_, st.g_rh, false);
    det_conv_plane(st.emb_prev, gnx_, st.g_nx, false);
    det_conv_plane(st.gru_h, gnh_, st.g_nh, false);
    for (size_t i = 0; i < st.gru_h.v.size(); ++i) {
      const float u = sigmoid_scalar(st.g_ux.v[i] + st.g_uh.v[i]);
      const float r = sigmoid_scalar(st.g_rx.v[i] + st.g_rh.v[i]);
      const float n = std::tanh(st.g_nx.v[i] + r * st.g_nh.v[i]);
      st.gru_h.v[i] = (1.0f - u) * st.gru_h.v[i] + u * n;
    }
  }

  // Prepares frame t: advances the temporal context, precomputes the
  // conditioning features, and clears the current-frame buffers.
  void begin_frame(FrameState& st, int t) const {
    if (cfg_.variant == PriorVariant::kGru && t > 0) gru_step(st);
    if (cfg_.variant != PriorVariant::kNone) {
      const Plane& ctx = cfg_.variant == PriorVariant::kFrame ? st.emb_prev : st.gru_h;
      for (int li = 0; li < cfg_.layers; ++li)
        det_conv_plane(ctx, lay_[li].cond, st.cond[li], false);
    }
    st.emb.zero();
    for (int li = 0; li < cfg_.layers; ++li) {
      st.vraw[li].zero();
      st.link[li].zero();
      st.vout[li].zero();
      st.hout[li].zero();
    }
  }

  // Computes the vertical-stack pipeline and the link features for row y of
  // every layer.  Depends only on rows above, which are complete.
  void row_start(FrameState& st, int y) const {
    const int g2 = cfg_.gate_c(), hk = cfg_.stack_c();
    const int w = st.emb.w;
    for (int li = 0; li < cfg_.layers; ++li) {
      const DetLayer& d = lay_[li];
      const Plane& vin = li == 0 ? st.emb : st.vout[li - 1];
      const PackedConv& p = d.vconv;
      for (int x = 0; x < w; ++x) {
        float* vr = st.vraw[li].at(y, x);
        for (int co = 0; co < g2; ++co) {
          float acc = p.b[co];
          for (int ky = 0; ky < p.kh; ++ky) {
            const int yy = y + ky - p.cy;
            if (yy < 0 || !p.tap_used[ky * p.kw]) continue;
            for (int kx = 0; kx < p.kw; ++kx) {
              const int xx = x + kx - p.cx;
              if (xx < 0 || xx >= w) continue;
              acc += det_dot(p.row(ky * p.kw + kx, co), vin.at(yy, xx), p.cin);
            }
          }
          vr[co] = acc;
        }
        float* lk = st.link[li].at(y, x);
        for (int co = 0; co < g2; ++co)
          lk[co] = d.link.b[co] + det_dot(d.link.row(0, co), vr, g2);
        const float* cv = cfg_.variant != PriorVariant::kNone ? st.cond[li].at(y, x) : nullptr;
        float* vo = st.vout[li].at(y, x);
        for (int j = 0; j < hk; ++j) {
          const float a = vr[j] + (cv != nullptr ? cv[j] : 0.0f);
          const float b = vr[hk + j] + (cv != nullptr ? cv[hk + j] : 0.0f);
          vo[j] = gated_pair(a, b);
        }
      }
    }
  }

  // Computes the PMF of group g at (y, x), updating the horizontal-stack
  // state for that group as a side effect.  Reads only values already final
  // in decode order.
  void group_pmf(FrameState& st, int y, int x, int g, float* pmf) const {
    const int hk = cfg_.stack_c(), hd = cfg_.hidden, kc = (cfg_.kernel - 1) / 2;
    for (int li = 0; li < cfg_.layers; ++li) {
      const DetLayer& d = lay_[li];
      const Plane& hin = li == 0 ? st.emb : st.hout[li - 1];
      for (int half = 0; half < 2; ++half) {
        float* pre = half == 0 ? st.pre_t.data() : st.pre_s.data();
        for (int j = 0; j < hd; ++j) {
          const int co = half * hk + g * hd + j;
          float acc = d.hb[co];
          for (int kx = 0; kx < kc; ++kx) {
            const int xx = x + kx - kc;
            if (xx < 0) continue;
            acc += det_dot(d.hctx.row(kx, co), hin.at(y, xx), d.cin);
          }
          const int lim = d.hclim[co];
          if (lim > 0)
            acc += det_dot(&d.hcw[static_cast<size_t>(co) * d.cin], hin.at(y, x), lim);
          acc += st.link[li].at(y, x)[co];
          if (cfg_.variant != PriorVariant::kNone)
            acc += st.cond[li].at(y, x)[cfg_.gate_c() + co];
          pre[j] = acc;
        }
      }
      float* hg = st.hgated[li].data() + g * hd;
      for (int j = 0; j < hd; ++j) hg[j] = gated_pair(st.pre_t[j], st.pre_s[j]);
      float* ho = st.hout[li].at(y, x) + g * hd;
      if (li == 0) {
        for (int j = 0; j < hd; ++j) ho[j] = hg[j];
      } else {
        const float* prev = st.hout[li - 1].at(y, x) + g * hd;
        for (int j = 0; j < hd; ++j) {
          const int c = g * hd + j;
          ho[j] = prev[j] + d.resb[c] +
                  det_dot(&d.resw[static_cast<size_t>(c) * hk], st.hgated[li].data(), d.reslim[c]);
        }
      }
    }
    const float* feat = st.hout.back().at(y, x);
    for (int s = 0; s < cfg_.codebook; ++s) {
      const int co = g * cfg_.codebook + s;
      st.logit[s] =
          headb_[co] + det_dot(&headw_[static_cast<size_t>(co) * hk], feat, headlim_[co]);
    }
    det_softmax(st.logit.data(), cfg_.codebook, pmf);
  }

  // Runs the sequential core for T frames of an H x W grid, pulling every
  // symbol from `fn` in decode order.
  void run_chunk(int t_frames, int h, int w, const SymbolFn& fn) const {
    NVC_CHECK(t_frames >= 1 && h >= 1 && w >= 1, "prior: empty code grid");
    FrameState st;
    init_state(st, h, w);
    std::vector<float> pmf(cfg_.codebook);
    for (int t = 0; t < t_frames; ++t) {
      begin_frame(st, t);
      for (int y = 0; y < h; ++y) {
        row_start(st, y);
        for (int x = 0; x < w; ++x)
          for (int g = 0; g < cfg_.groups; ++g) {
            group_pmf(st, y, x, g, pmf.data());
            const int code = fn(t, g, y, x, pmf.data());
            NVC_CHECK(code >= 0 && code < cfg_.codebook, "prior: symbol out of range");
            st.emb.at(y, x)[g] = embed_[code];
          }
      }
      st.emb.v.swap(st.emb_prev.v);
    }
  }

  PriorConfig cfg_;
  std::vector<float> embed_;
  std::vector<DetLayer> lay_;
  std::vector<float> headw_, headb_;
  std::vector<int> headlim_;
  PackedConv gux_, guh_, grx_, grh_, gnx_, gnh_;
};

}  // namespace nvc
