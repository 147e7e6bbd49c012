#include "nvc/container.hpp"

#include <zlib.h>

#include <cstring>

namespace nvc {
namespace {

constexpr char kMagic[4] = {'N', 'V', 'C', '1'};

void put_u8(std::vector<uint8_t>& out, uint32_t v) { out.push_back(static_cast<uint8_t>(v)); }

void put_u16(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t crc32_of(const std::vector<uint8_t>& bytes) {
  return static_cast<uint32_t>(
      crc32(0L, bytes.empty() ? Z_NULL : bytes.data(), static_cast<uInt>(bytes.size())));
}

struct Reader {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;

  void need(size_t k, const char* what) {
    NVC_CHECK(pos + k <= n, strcat_("container truncated while reading ", what));
  }
  uint32_t u8(const char* what) {
    need(1, what);
    return p[pos++];
  }
  uint32_t u16(const char* what) {
    need(2, what);
    uint32_t v = static_cast<uint32_t>(p[pos]) | static_cast<uint32_t>(p[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
};

}  // namespace

std::vector<uint8_t> write_container(const ContainerHeader& h,
                                     const std::vector<uint8_t>& payload) {
  NVC_CHECK(h.t_frames >= 0 && h.t_frames <= 0xffff, "frame count out of header range");
  NVC_CHECK(h.channels >= 1 && h.channels <= 0xffff && h.height >= 1 && h.height <= 0xffff &&
                h.width >= 1 && h.width <= 0xffff,
            "frame dimensions out of header range");
  NVC_CHECK(h.groups >= 1 && h.groups <= 0xff && h.codebook >= 1 && h.codebook <= 0xff &&
                h.stride >= 1 && h.stride <= 0xff,
            "latent geometry out of header range");
  NVC_CHECK(h.prior_tag >= 0 && h.prior_tag <= 2, "unknown prior tag");
  NVC_CHECK(h.chunk_t >= 1 && h.chunk_t <= 0xff, "chunk length out of header range");
  NVC_CHECK(h.height % h.stride == 0 && h.width % h.stride == 0,
            "frame dimensions must be divisible by the latent stride");
  NVC_CHECK(static_cast<int>(h.centers.size()) == h.codebook,
            "codebook center count does not match header");

  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u8(out, h.version);
  put_u16(out, static_cast<uint32_t>(h.t_frames));
  put_u16(out, static_cast<uint32_t>(h.channels));
  put_u16(out, static_cast<uint32_t>(h.height));
  put_u16(out, static_cast<uint32_t>(h.width));
  put_u8(out, static_cast<uint32_t>(h.groups));
  put_u8(out, static_cast<uint32_t>(h.codebook));
  put_u8(out, static_cast<uint32_t>(h.stride));
  put_u8(out, static_cast<uint32_t>(h.prior_tag));
  put_u8(out, static_cast<uint32_t>(h.chunk_t));
  out.insert(out.end(), h.model_hash.begin(), h.model_hash.end());
  for (float c : h.centers) {
    uint32_t bits;
    std::memcpy(&bits, &c, 4);
    put_u32(out, bits);
  }
  put_u64(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32_of(payload));
  return out;
}

ParsedContainer parse_container(const uint8_t* data, size_t size) {
  Reader r{data, size};
  r.need(4, "magic");
  NVC_CHECK(std::memcmp(data, kMagic, 4) == 0, "not a recognized bitstream (bad magic)");
  r.pos = 4;

  ParsedContainer out;
  ContainerHeader& h = out.header;
  h.version = static_cast<uint8_t>(r.u8("version"));
  NVC_CHECK(h.version == 1,
            strcat_("unsupported bitstream version ", static_cast<int>(h.version)));
  h.t_frames = static_cast<int>(r.u16("frame count"));
  h.channels = static_cast<int>(r.u16("channel count"));
  h.height = static_cast<int>(r.u16("height"));
  h.width = static_cast<int>(r.u16("width"));
  h.groups = static_cast<int>(r.u8("group count"));
  h.codebook = static_cast<int>(r.u8("codebook size"));
  h.stride = static_cast<int>(r.u8("stride"));
  h.prior_tag = static_cast<int>(r.u8("prior tag"));
  h.chunk_t = static_cast<int>(r.u8("chunk length"));
  NVC_CHECK(h.channels >= 1 && h.height >= 1 && h.width >= 1, "degenerate frame dimensions");
  NVC_CHECK(h.groups >= 1 && h.codebook >= 1 && h.stride >= 1 && h.chunk_t >= 1,
            "degenerate latent geometry");
  NVC_CHECK(h.prior_tag <= 2, strcat_("unknown prior tag ", h.prior_tag));
  NVC_CHECK(h.height % h.stride == 0 && h.width % h.stride == 0,
            "frame dimensions not divisible by the latent stride");
  r.need(8, "model hash");
  std::memcpy(h.model_hash.data(), data + r.pos, 8);
  r.pos += 8;
  h.centers.resize(static_cast<size_t>(h.codebook));
  for (int i = 0; i < h.codebook; ++i) {
    uint32_t bits = r.u32("codebook centers");
    std::memcpy(&h.centers[static_cast<size_t>(i)], &bits, 4);
  }
  uint64_t plen = r.u64("payload length");
  size_t remaining = size - r.pos;
  NVC_CHECK(remaining >= 4 && plen == remaining - 4,
            "payload length does not match remaining bytes (truncated or trailing garbage)");
  out.payload.assign(data + r.pos, data + r.pos + plen);
  r.pos += plen;
  uint32_t stored_crc = r.u32("payload checksum");
  NVC_CHECK(stored_crc == crc32_of(out.payload), "payload checksum mismatch (corrupted stream)");
  NVC_CHECK(r.pos == size, "trailing bytes after container");
  return out;
}

}  // namespace nvc
