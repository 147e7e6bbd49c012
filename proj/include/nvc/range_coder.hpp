#pragma once

#include <cstdint>
#include <vector>

namespace nvc {

// Adaptive-PMF byte-oriented range coder. 32-bit range, 16-bit probability
// resolution (total = 1<<16), byte renormalization below 2^24, explicit
// carry propagation into the output buffer, 4-byte flush. The symbol whose
// upper cumulative equals the total absorbs the rounding remainder of the
// range split, so every representable code value decodes to a symbol.

constexpr uint32_t kPmfTotalBits = 16;
constexpr uint32_t kPmfTotal = 1u << kPmfTotalBits;

// Cumulative fixed-point PMF: cum[0] = 0, cum[n] = kPmfTotal, every symbol
// has nonzero width (so any symbol stays codable regardless of the model).
struct QuantizedPmf {
  std::vector<uint32_t> cum;
  int size() const { return static_cast<int>(cum.size()) - 1; }
  uint32_t width(int s) const { return cum[s + 1] - cum[s]; }
};

// counts_i = max(1, round(p_i * (total - n))), then the largest count absorbs
// the difference to make the total exact. Inputs must be finite and
// non-negative; an all-zero vector quantizes to uniform.
QuantizedPmf quantize_pmf(const float* p, int n);
QuantizedPmf quantize_pmf(const std::vector<float>& p);

// Ideal code length of symbol s under the quantized PMF, in bits.
double pmf_bits(const QuantizedPmf& pmf, int s);

class RangeEncoder {
 public:
  void encode_symbol(const QuantizedPmf& pmf, int s);
  // Flushes the tail and returns the finished byte stream. No further
  // symbols may be encoded afterwards.
  std::vector<uint8_t> finish();
  size_t bytes_pending() const { return out_.size(); }

 private:
  void renormalize();
  void propagate_carry();
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  bool finished_ = false;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size);
  explicit RangeDecoder(const std::vector<uint8_t>& data)
      : RangeDecoder(data.data(), data.size()) {}
  int decode_symbol(const QuantizedPmf& pmf);
  size_t bytes_consumed() const { return pos_; }

 private:
  uint8_t next_byte();
  const uint8_t* data_ = nullptr;
  size_t size_ = 0;
  size_t pos_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

}  // namespace nvc
