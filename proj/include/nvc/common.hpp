#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvc {

// All invariant violations throw; the CLI maps exceptions to exit code 1.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// msg_expr is only evaluated on failure, so call sites may build rich
// messages without paying for them on the hot path.
#define NVC_CHECK(cond, msg_expr)        \
  do {                                   \
    if (!(cond)) ::nvc::fail(msg_expr);  \
  } while (0)

template <typename... Args>
std::string strcat_(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << args);
  return oss.str();
}

// Dense row-major shape, rank 0..5. Axis order conventions:
//   video pixels  (T, C, H, W) per clip, batch folded as needed
//   2d features   (N, C, H, W)
//   3d features   (N, C, T, H, W)
struct Shape {
  std::array<int, 5> d{1, 1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    NVC_CHECK(dims.size() <= 5, "shape rank > 5");
    rank = static_cast<int>(dims.size());
    int i = 0;
    for (int v : dims) d[i++] = v;
  }

  int operator[](int i) const { return d[i]; }
  int& operator[](int i) { return d[i]; }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank; ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + ")";
  }
};

// Deterministic RNG. Distributions are hand-scaled because the std::
// distribution adaptors are implementation-defined and would break the
// same-seed => same-parameters guarantee across toolchains.
struct Rng {
  std::mt19937_64 gen;

  explicit Rng(uint64_t seed) : gen(seed) {}

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen() >> 11) * (1.0 / 9007199254740992.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (cached second variate)
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return gen() % n; }

 private:
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Shared scalar nonlinearities. The coding path and the training graph must
// evaluate these with the same expression so their outputs agree bit-for-bit
// on identical inputs.
template <typename S>
inline S sigmoid_scalar(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
inline S gated_pair(S a, S b) {
  return std::tanh(a) * sigmoid_scalar(b);
}

// FNV-1a, used to derive per-parameter init streams from names.
inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace nvc
