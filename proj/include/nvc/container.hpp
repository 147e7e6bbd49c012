// Bitstream container: fixed little-endian header, opaque arithmetic
// payload, trailing CRC-32 over the payload bytes.
//
//   "NVC1" | version u8 | T C H W u16 | K L s u8 | prior u8 | chunk_T u8
//   | model hash 8B | L x f32 codebook centers | payload length u64
//   | payload | CRC-32 u32
//
// T is the true frame count before chunk padding.  The payload is a
// sequence of independently decodable chunk streams, each framed as a u32
// byte length followed by that many coder bytes (framing added/consumed by
// the codec layer; the container treats the payload as opaque).
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nvc/common.hpp"

namespace nvc {

struct ContainerHeader {
  uint8_t version = 1;
  int t_frames = 0;  // true frame count (pre padding)
  int channels = 0;
  int height = 0;
  int width = 0;
  int groups = 0;    // K: latent channel groups
  int codebook = 0;  // L: centers per group
  int stride = 8;    // s: spatial downsampling factor
  int prior_tag = 0;  // 0 none, 1 frame, 2 gru
  int chunk_t = 8;
  std::array<uint8_t, 8> model_hash{};
  std::vector<float> centers;  // length L

  int latent_h() const { return height / stride; }
  int latent_w() const { return width / stride; }
};

// Serializes header + payload + CRC into one byte vector.
std::vector<uint8_t> write_container(const ContainerHeader& h,
                                     const std::vector<uint8_t>& payload);

// Parses and validates (magic, version, divisibility, length, CRC).
struct ParsedContainer {
  ContainerHeader header;
  std::vector<uint8_t> payload;
};
ParsedContainer parse_container(const uint8_t* data, size_t size);
inline ParsedContainer parse_container(const std::vector<uint8_t>& bytes) {
  return parse_container(bytes.data(), bytes.size());
}

}  // namespace nvc
