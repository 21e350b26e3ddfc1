#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "imc/error.hpp"

namespace imc {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);

/// Allocates on 64-byte boundaries. Eigen picks its vectorized code path from
/// the buffer address, so a fixed alignment keeps floating-point results
/// independent of where the allocator happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major array. Feature maps use N,C,H,W order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  // NCHW accessors; only valid for rank-4 tensors.
  std::int64_t n() const { return dim(0); }
  std::int64_t c() const { return dim(1); }
  std::int64_t h() const { return dim(2); }
  std::int64_t w() const { return dim(3); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  /// Pointer to the H*W plane of (n, c).
  T* plane(std::int64_t n, std::int64_t c) { return data() + (n * shape_[1] + c) * shape_[2] * shape_[3]; }
  const T* plane(std::int64_t n, std::int64_t c) const {
    return data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }

  void fill(T value);
  Tensor reshaped(Shape shape) const;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(T scale);

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

/// Throws ShapeError unless `a` and `b` have identical shapes.
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what);

/// Throws ShapeError unless `t` is rank 4.
template <typename T>
void require_nchw(const Tensor<T>& t, const char* what);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T sum(const Tensor<T>& t);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Trainable parameter: value plus an accumulated gradient of identical shape.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  explicit Param(Shape shape) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(T(0)); }
};

}  // namespace imc
