#include "nvc/range_coder.hpp"

#include <cmath>

#include "nvc/common.hpp"

namespace nvc {

QuantizedPmf quantize_pmf(const float* p, int n) {
  NVC_CHECK(n >= 1 && n <= 256, strcat_("quantize_pmf: alphabet size ", n, " out of range"));
  const double scale = static_cast<double>(kPmfTotal - static_cast<uint32_t>(n));
  std::vector<uint32_t> counts(n);
  uint64_t sum = 0;
  int largest = 0;
  double total_in = 0.0;
  for (int i = 0; i < n; ++i) {
    NVC_CHECK(std::isfinite(p[i]) && p[i] >= 0.0f,
              strcat_("quantize_pmf: invalid probability at symbol ", i));
    total_in += p[i];
  }
  for (int i = 0; i < n; ++i) {
    double pi = total_in > 0.0 ? p[i] / total_in : 1.0 / n;
    uint32_t c = static_cast<uint32_t>(std::lround(pi * scale));
    if (c < 1) c = 1;
    counts[i] = c;
    sum += c;
    if (c > counts[largest]) largest = i;
  }
  int64_t diff = static_cast<int64_t>(kPmfTotal) - static_cast<int64_t>(sum);
  int64_t repaired = static_cast<int64_t>(counts[largest]) + diff;
  NVC_CHECK(repaired >= 1, "quantize_pmf: repair step exhausted the largest count");
  counts[largest] = static_cast<uint32_t>(repaired);

  QuantizedPmf pmf;
  pmf.cum.resize(n + 1);
  pmf.cum[0] = 0;
  for (int i = 0; i < n; ++i) pmf.cum[i + 1] = pmf.cum[i] + counts[i];
  NVC_CHECK(pmf.cum[n] == kPmfTotal, "quantize_pmf: totals do not add up");
  return pmf;
}

QuantizedPmf quantize_pmf(const std::vector<float>& p) {
  return quantize_pmf(p.data(), static_cast<int>(p.size()));
}

double pmf_bits(const QuantizedPmf& pmf, int s) {
  return -std::log2(static_cast<double>(pmf.width(s)) / kPmfTotal);
}

void RangeEncoder::propagate_carry() {
  // A carry out of the 32-bit window ripples back through any 0xFF bytes.
  // It cannot run off the front: the conceptual code fraction stays < 1.
  size_t i = out_.size();
  for (;;) {
    NVC_CHECK(i > 0, "range encoder: carry escaped the stream");
    --i;
    if (out_[i] != 0xFFu) {
      out_[i] += 1;
      break;
    }
    out_[i] = 0;
  }
}

void RangeEncoder::renormalize() {
  while (range_ < (1u << 24)) {
    out_.push_back(static_cast<uint8_t>((low_ >> 24) & 0xFFu));
    low_ = (low_ << 8) & 0xFFFFFFFFu;
    range_ <<= 8;
  }
}

void RangeEncoder::encode_symbol(const QuantizedPmf& pmf, int s) {
  NVC_CHECK(!finished_, "range encoder: already finished");
  NVC_CHECK(s >= 0 && s < pmf.size(), strcat_("range encoder: symbol ", s, " out of range"));
  // Exact proportional subdivision: boundary(c) = floor(range * c / total).
  // cum = total maps to exactly `range`, so the full interval is used and the
  // precision loss per symbol stays below one range unit (the coarser
  // `(range >> 16) * cum` split loses up to 2^16 units per symbol, which adds
  // up measurably over megasymbol streams).
  const uint64_t lo = (static_cast<uint64_t>(range_) * pmf.cum[s]) >> kPmfTotalBits;
  const uint64_t hi = (static_cast<uint64_t>(range_) * pmf.cum[s + 1]) >> kPmfTotalBits;
  low_ += lo;
  if (low_ >> 32) {
    propagate_carry();
    low_ &= 0xFFFFFFFFu;
  }
  range_ = static_cast<uint32_t>(hi - lo);
  renormalize();
}

std::vector<uint8_t> RangeEncoder::finish() {
  NVC_CHECK(!finished_, "range encoder: already finished");
  finished_ = true;
  for (int i = 0; i < 4; ++i) {
    out_.push_back(static_cast<uint8_t>((low_ >> 24) & 0xFFu));
    low_ = (low_ << 8) & 0xFFFFFFFFu;
  }
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  NVC_CHECK(pos_ < size_, "range decoder: bitstream truncated");
  return data_[pos_++];
}

int RangeDecoder::decode_symbol(const QuantizedPmf& pmf) {
  // Mirror of encode_symbol's subdivision: find the slice containing code_.
  // Linear scan with the exact boundaries; alphabets are small (L <= 256).
  // A corrupt stream can leave code_ >= range, which clamps to the last
  // symbol here and is caught by the container checksum.
  int s = 0;
  while (s + 1 < pmf.size() &&
         ((static_cast<uint64_t>(range_) * pmf.cum[s + 1]) >> kPmfTotalBits) <= code_)
    ++s;
  const uint64_t lo = (static_cast<uint64_t>(range_) * pmf.cum[s]) >> kPmfTotalBits;
  const uint64_t hi = (static_cast<uint64_t>(range_) * pmf.cum[s + 1]) >> kPmfTotalBits;
  code_ -= static_cast<uint32_t>(lo);
  range_ = static_cast<uint32_t>(hi - lo);
  while (range_ < (1u << 24)) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return s;
}

}  // namespace nvc
