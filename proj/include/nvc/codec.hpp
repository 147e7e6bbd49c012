// End-to-end video codec: autoencoder + scalar quantizer + autoregressive
// prior + range coder, packaged behind the container format.
//
// Frames enter and leave as (T,C,H,W) float tensors on the raw {0..255}
// scale.  Encoding processes non-overlapping chunks of chunk_t frames
// (default 8); a trailing partial chunk is padded by repeating the last
// frame, with the true frame count stored in the header and the padding
// trimmed again on decode.  Prior conditioning state resets at every chunk
// boundary, so chunks are independently decodable; the payload frames each
// chunk's coder bytes with a u32 length prefix.
#pragma once

#include <cstring>
#include <vector>

#include "nvc/checkpoint.hpp"
#include "nvc/container.hpp"
#include "nvc/losses.hpp"
#include "nvc/model.hpp"
#include "nvc/range_coder.hpp"

namespace nvc {

namespace codec_detail {

inline int prior_tag_of(PriorVariant v) {
  switch (v) {
    case PriorVariant::kNone: return 0;
    case PriorVariant::kFrame: return 1;
    case PriorVariant::kGru: return 2;
  }
  return 0;
}

inline PriorVariant prior_variant_of_tag(int tag) {
  NVC_CHECK(tag >= 0 && tag <= 2, strcat_("unknown prior tag ", tag));
  return tag == 0 ? PriorVariant::kNone : tag == 1 ? PriorVariant::kFrame : PriorVariant::kGru;
}

// Frames [first, first+count) with indices clamped to the last real frame,
// which implements trailing-chunk padding.
inline Tensor<float> chunk_of(const Tensor<float>& frames, int first, int count) {
  const Shape& s = frames.shape();
  Tensor<float> out(Shape{count, s[1], s[2], s[3]});
  const int64_t frame_n = s.numel() / s[0];
  for (int i = 0; i < count; ++i) {
    int src = std::min(first + i, s[0] - 1);
    std::memcpy(out.data() + i * frame_n, frames.data() + src * frame_n,
                static_cast<size_t>(frame_n) * sizeof(float));
  }
  return out;
}

inline void check_frames(const Model& m, const Tensor<float>& frames) {
  const Shape& s = frames.shape();
  NVC_CHECK(s.rank == 4, "frames must be a (T,C,H,W) tensor");
  NVC_CHECK(s[1] == m.cfg.ae.input_channels,
            strcat_("frame channel count ", s[1], " does not match model (",
                    m.cfg.ae.input_channels, ")"));
  if (s[0] > 0) {
    NVC_CHECK(s[2] >= 1 && s[3] >= 1, "empty frame dimensions");
    NVC_CHECK(s[2] % AutoencoderConfig::kStride == 0 && s[3] % AutoencoderConfig::kStride == 0,
              strcat_("frame dimensions ", s[2], "x", s[3], " must be divisible by ",
                      AutoencoderConfig::kStride, " (crop first)"));
  }
}

}  // namespace codec_detail

// Encodes frames into a self-describing container byte stream.
inline std::vector<uint8_t> encode_video(const Model& m, const Tensor<float>& frames,
                                         int chunk_t = 8) {
  codec_detail::check_frames(m, frames);
  NVC_CHECK(chunk_t >= 1 && chunk_t <= 255, "chunk length must be in [1,255]");
  const Shape& s = frames.shape();
  NVC_CHECK(s[0] <= 0xffff, "too many frames for one stream");

  // For an empty stream the spatial dims are metadata only; normalize
  // unusable values so the header invariants still hold.
  auto header_dim = [&](int d) {
    return (d >= 1 && d % AutoencoderConfig::kStride == 0) ? d : AutoencoderConfig::kStride;
  };
  ContainerHeader h;
  h.t_frames = s[0];
  h.channels = s[1];
  h.height = s[0] > 0 ? s[2] : header_dim(s[2]);
  h.width = s[0] > 0 ? s[3] : header_dim(s[3]);
  h.groups = m.cfg.prior.groups;
  h.codebook = m.cfg.prior.codebook;
  h.stride = AutoencoderConfig::kStride;
  h.prior_tag = codec_detail::prior_tag_of(m.cfg.prior.variant);
  h.chunk_t = chunk_t;
  h.model_hash = model_hash(m.ps);
  h.centers.assign(m.codebook->value.data(), m.codebook->value.data() + m.cfg.prior.codebook);

  std::vector<uint8_t> payload;
  if (s[0] > 0) {
    NoGradGuard ng;
    PriorEvaluator ev(m.prior);
    for (int first = 0; first < s[0]; first += chunk_t) {
      Tensor<float> chunk = codec_detail::chunk_of(frames, first, chunk_t);
      Var<float> z = m.ae.encode(make_const(std::move(chunk)), /*training=*/false);
      Tensor<int32_t> codes = quantize_hard(z->value, m.codebook->value);
      RangeEncoder enc;
      ev.encode(codes, enc);
      std::vector<uint8_t> bytes = enc.finish();
      NVC_CHECK(bytes.size() <= 0xffffffffu, "chunk stream too large");
      for (int i = 0; i < 4; ++i)
        payload.push_back(static_cast<uint8_t>(bytes.size() >> (8 * i)));
      payload.insert(payload.end(), bytes.begin(), bytes.end());
    }
  }
  return write_container(h, payload);
}

// Decodes a container produced by encode_video with the same model.  The
// result is the raw reconstruction (T,C,H,W); values are not clamped or
// rounded here — that happens at image export.
inline Tensor<float> decode_video(const Model& m, const uint8_t* data, size_t size) {
  ParsedContainer pc = parse_container(data, size);
  const ContainerHeader& h = pc.header;

  NVC_CHECK(h.model_hash == model_hash(m.ps),
            "refusing to decode: bitstream model hash does not match this model's weights");
  NVC_CHECK(h.channels == m.cfg.ae.input_channels && h.groups == m.cfg.prior.groups &&
                h.codebook == m.cfg.prior.codebook && h.stride == AutoencoderConfig::kStride &&
                h.prior_tag == codec_detail::prior_tag_of(m.cfg.prior.variant),
            "bitstream geometry does not match this model's configuration");
  NVC_CHECK(std::memcmp(h.centers.data(), m.codebook->value.data(),
                        static_cast<size_t>(h.codebook) * sizeof(float)) == 0,
            "bitstream codebook centers do not match this model");

  Tensor<float> out(Shape{h.t_frames, h.channels, h.height, h.width});
  if (h.t_frames == 0) {
    NVC_CHECK(pc.payload.empty(), "empty stream carries payload bytes");
    return out;
  }

  NoGradGuard ng;
  PriorEvaluator ev(m.prior);
  const int lh = h.latent_h(), lw = h.latent_w();
  const int64_t frame_n = static_cast<int64_t>(h.channels) * h.height * h.width;
  size_t pos = 0;
  for (int first = 0; first < h.t_frames; first += h.chunk_t) {
    NVC_CHECK(pos + 4 <= pc.payload.size(), "payload truncated at chunk boundary");
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(pc.payload[pos + i]) << (8 * i);
    pos += 4;
    NVC_CHECK(pos + len <= pc.payload.size(), "payload truncated inside a chunk");
    RangeDecoder dec(pc.payload.data() + pos, len);
    pos += len;

    Tensor<int32_t> codes = ev.decode(h.chunk_t, lh, lw, dec);
    Var<float> x = m.ae.decode(make_const(dequantize(codes, m.codebook->value)),
                               /*training=*/false);
    NVC_CHECK((x->value.shape() == Shape{h.chunk_t, h.channels, h.height, h.width}),
              "reconstructed chunk has unexpected shape");
    const int keep = std::min(h.chunk_t, h.t_frames - first);
    std::memcpy(out.data() + static_cast<int64_t>(first) * frame_n, x->value.data(),
                static_cast<size_t>(keep) * frame_n * sizeof(float));
  }
  NVC_CHECK(pos == pc.payload.size(), "trailing bytes after final chunk");
  return out;
}

inline Tensor<float> decode_video(const Model& m, const std::vector<uint8_t>& bytes) {
  return decode_video(m, bytes.data(), bytes.size());
}

// Rate accounting for one video: the training-graph rate proxy next to the
// true file cost.  All three rates are bits per displayed pixel, i.e. the
// denominator is the true frame count even when the final chunk was padded.
struct RateReport {
  double proxy_bpp = 0.0;           // teacher-forced cross-entropy bits
  double actual_bpp_payload = 0.0;  // coder payload bytes only
  double actual_bpp_total = 0.0;    // entire container including header
  int64_t payload_bytes = 0;
  int64_t total_bytes = 0;
};

inline RateReport rate_report(const Model& m, const Tensor<float>& frames, int chunk_t = 8) {
  codec_detail::check_frames(m, frames);
  const Shape& s = frames.shape();
  NVC_CHECK(s[0] > 0, "rate report needs at least one frame");

  std::vector<uint8_t> stream = encode_video(m, frames, chunk_t);
  ParsedContainer pc = parse_container(stream);

  double proxy_bits = 0.0;
  {
    NoGradGuard ng;
    for (int first = 0; first < s[0]; first += chunk_t) {
      Tensor<float> chunk = codec_detail::chunk_of(frames, first, chunk_t);
      Var<float> z = m.ae.encode(make_const(std::move(chunk)), /*training=*/false);
      Tensor<int32_t> codes = quantize_hard(z->value, m.codebook->value);
      Var<float> q = make_const(codes_to_onehot<float>(codes, m.cfg.prior.codebook));
      Var<float> logp = group_log_softmax(m.prior.logits(q), m.cfg.prior.codebook);
      proxy_bits += static_cast<double>(rate_bits(q, logp)->value[0]);
    }
  }

  const double pixels = static_cast<double>(s[0]) * s[2] * s[3];
  RateReport r;
  r.payload_bytes = static_cast<int64_t>(pc.payload.size());
  r.total_bytes = static_cast<int64_t>(stream.size());
  r.proxy_bpp = proxy_bits / pixels;
  r.actual_bpp_payload = static_cast<double>(r.payload_bytes) * 8.0 / pixels;
  r.actual_bpp_total = static_cast<double>(r.total_bytes) * 8.0 / pixels;
  return r;
}

}  // namespace nvc
