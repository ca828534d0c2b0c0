#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace refsr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents of a dense (batch, channel, height, width) array.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Raised when operand extents disagree; the message names both shapes.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& what, const Shape& expected, const Shape& actual);
  const Shape& expected() const { return expected_; }
  const Shape& actual() const { return actual_; }

 private:
  Shape expected_;
  Shape actual_;
};

void require_same_shape(const char* what, const Shape& a, const Shape& b);

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  T& operator()(int b, int ch, int y, int x) { return data_[index(b, ch, y, x)]; }
  const T& operator()(int b, int ch, int y, int x) const { return data_[index(b, ch, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the contiguous h*w plane of (b, ch).
  T* plane(int b, int ch) { return data_.data() + index(b, ch, 0, 0); }
  const T* plane(int b, int ch) const { return data_.data() + index(b, ch, 0, 0); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  BasicTensor& operator+=(const BasicTensor& other);
  BasicTensor& operator-=(const BasicTensor& other);
  BasicTensor& operator*=(T s);

  /// True when every element is finite.
  bool all_finite() const;

 private:
  Shape shape_;
  // Aligned storage keeps vectorised reductions independent of heap addresses.
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

template <typename T>
BasicTensor<T> operator+(BasicTensor<T> a, const BasicTensor<T>& b) {
  a += b;
  return a;
}
template <typename T>
BasicTensor<T> operator-(BasicTensor<T> a, const BasicTensor<T>& b) {
  a -= b;
  return a;
}
template <typename T>
BasicTensor<T> operator*(BasicTensor<T> a, T s) {
  a *= s;
  return a;
}

/// Elementwise product.
template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Concatenate along the channel axis; batch and spatial extents must agree.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [begin, begin + count) of a tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& t, int begin, int count);

/// Multiply every channel of `t` by the single-channel map `gate` (broadcast over c).
template <typename T>
BasicTensor<T> broadcast_mul(const BasicTensor<T>& gate, const BasicTensor<T>& t);

/// Sum over channels of a*b, giving a single-channel map; adjoint of broadcast_mul w.r.t. gate.
template <typename T>
BasicTensor<T> channel_dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
double sum(const BasicTensor<T>& t);

template <typename T>
double mean(const BasicTensor<T>& t);

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// FNV-1a over the raw element bytes.
template <typename T>
std::uint64_t checksum(const BasicTensor<T>& t);

std::uint64_t fnv1a(const void* bytes, std::size_t count, std::uint64_t seed = 1469598103934665603ULL);

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

#ifndef NDEBUG
#define REFSR_ASSERT_FINITE(t) ::refsr::detail::assert_finite((t), __FILE__, __LINE__)
#else
#define REFSR_ASSERT_FINITE(t) ((void)0)
#endif

namespace detail {
template <typename T>
void assert_finite(const BasicTensor<T>& t, const char* file, int line);
}  // namespace detail

}  // namespace refsr
