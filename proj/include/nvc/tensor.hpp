#pragma once

#include <Eigen/Dense>
#include <new>

#include "nvc/common.hpp"

namespace nvc {

// 64-byte aligned storage for tensor buffers. Vectorized reductions peel a
// scalar head whose length depends on the pointer's alignment; pinning every
// buffer to one alignment keeps summation order — and therefore results —
// independent of where the heap happened to place an allocation.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

// Dense row-major tensor owning its storage. Scalar is float for all
// production paths and double for gradient checking.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(shape.numel(), S(0)) {}
  Tensor(const Shape& shape, S fill) : shape_(shape), data_(shape.numel(), fill) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank; }
  int dim(int i) const { return shape_[i]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](int64_t i) { return data_[i]; }
  S operator[](int64_t i) const { return data_[i]; }

  // Row-major addressing; rank-checked in debug paths only.
  S& at(int a) { return data_[a]; }
  S& at(int a, int b) { return data_[static_cast<int64_t>(a) * shape_[1] + b]; }
  S& at(int a, int b, int c) {
    return data_[(static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  S& at(int a, int b, int c, int d) {
    return data_[((static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  S& at(int a, int b, int c, int d, int e) {
    return data_[(((static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d) *
                     shape_[4] +
                 e];
  }
  S at(int a) const { return data_[a]; }
  S at(int a, int b) const { return data_[static_cast<int64_t>(a) * shape_[1] + b]; }
  S at(int a, int b, int c) const {
    return data_[(static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  S at(int a, int b, int c, int d) const {
    return data_[((static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  S at(int a, int b, int c, int d, int e) const {
    return data_[(((static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d) *
                     shape_[4] +
                 e];
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(S(0)); }

  // Reinterpret with a new shape of equal element count (no copy).
  Tensor<S> reshaped(const Shape& s) const {
    NVC_CHECK(s.numel() == numel(),
              strcat_("reshape ", shape_.str(), " -> ", s.str(), ": element count mismatch"));
    Tensor<S> t = *this;
    t.shape_ = s;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t(shape_);
    for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<T>(data_[i]);
    return t;
  }

  using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

  MatMap mat(int64_t rows, int64_t cols) {
    NVC_CHECK(rows * cols == numel(), "matrix view size mismatch");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(int64_t rows, int64_t cols) const {
    NVC_CHECK(rows * cols == numel(), "matrix view size mismatch");
    return ConstMatMap(data_.data(), rows, cols);
  }
  VecMap vec() { return VecMap(data_.data(), numel()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), numel()); }

 private:
  Shape shape_;
  std::vector<S, AlignedAllocator<S>> data_;
};

template <typename S>
Tensor<S> full_like(const Tensor<S>& t, S v) {
  return Tensor<S>(t.shape(), v);
}

template <typename S>
Tensor<S> rand_uniform(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
Tensor<S> rand_normal(const Shape& shape, Rng& rng, double stddev = 1.0) {
  Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * stddev);
  return t;
}

}  // namespace nvc
