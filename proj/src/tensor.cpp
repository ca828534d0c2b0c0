#include "refsr/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace refsr {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

ShapeError::ShapeError(const std::string& what, const Shape& expected, const Shape& actual)
    : Error(what + ": shape " + expected.str() + " vs " + actual.str()),
      expected_(expected),
      actual_(actual) {}

void require_same_shape(const char* what, const Shape& a, const Shape& b) {
  if (!(a == b)) throw ShapeError(what, a, b);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.numel()) {
    throw Error("tensor buffer length " + std::to_string(data_.size()) + " does not match shape " +
                shape_.str());
  }
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::operator+=(const BasicTensor& other) {
  require_same_shape("tensor add", shape_, other.shape_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::operator-=(const BasicTensor& other) {
  require_same_shape("tensor sub", shape_, other.shape_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::operator*=(T s) {
  for (auto& v : data_) v *= s;
  return *this;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("hadamard", a.shape(), b.shape());
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels", a.shape(), b.shape());
  }
  BasicTensor<T> out(Shape{a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    std::memcpy(out.plane(n, 0), a.plane(n, 0), sizeof(T) * plane * a.c());
    std::memcpy(out.plane(n, a.c()), b.plane(n, 0), sizeof(T) * plane * b.c());
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.c()) {
    throw ShapeError("slice_channels", t.shape(), Shape{t.n(), begin + count, t.h(), t.w()});
  }
  BasicTensor<T> out(Shape{t.n(), count, t.h(), t.w()});
  const std::size_t plane = static_cast<std::size_t>(t.h()) * t.w();
  for (int n = 0; n < t.n(); ++n) {
    std::memcpy(out.plane(n, 0), t.plane(n, begin), sizeof(T) * plane * count);
  }
  return out;
}

template <typename T>
BasicTensor<T> broadcast_mul(const BasicTensor<T>& gate, const BasicTensor<T>& t) {
  if (gate.c() != 1 || gate.n() != t.n() || gate.h() != t.h() || gate.w() != t.w()) {
    throw ShapeError("broadcast_mul", gate.shape(), t.shape());
  }
  BasicTensor<T> out(t.shape());
  const std::size_t plane = static_cast<std::size_t>(t.h()) * t.w();
  for (int n = 0; n < t.n(); ++n) {
    const T* g = gate.plane(n, 0);
    for (int c = 0; c < t.c(); ++c) {
      const T* src = t.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = g[i] * src[i];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("channel_dot", a.shape(), b.shape());
  BasicTensor<T> out(Shape{a.n(), 1, a.h(), a.w()});
  const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    T* dst = out.plane(n, 0);
    for (int c = 0; c < a.c(); ++c) {
      const T* pa = a.plane(n, c);
      const T* pb = b.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] += pa[i] * pb[i];
    }
  }
  return out;
}

template <typename T>
double sum(const BasicTensor<T>& t) {
  double s = 0.0;
  for (T v : t.values()) s += static_cast<double>(v);
  return s;
}

template <typename T>
double mean(const BasicTensor<T>& t) {
  return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size());
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

std::uint64_t fnv1a(const void* bytes, std::size_t count, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < count; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
std::uint64_t checksum(const BasicTensor<T>& t) {
  return fnv1a(t.data(), t.size() * sizeof(T));
}

namespace detail {
template <typename T>
void assert_finite(const BasicTensor<T>& t, const char* file, int line) {
  if (!t.all_finite()) {
    std::fprintf(stderr, "%s:%d: non-finite value in tensor %s\n", file, line, t.shape().str().c_str());
    std::abort();
  }
}
}  // namespace detail

#define REFSR_INSTANTIATE(T)                                                              \
  template class BasicTensor<T>;                                                          \
  template BasicTensor<T> hadamard(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                \
  template BasicTensor<T> broadcast_mul(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> channel_dot(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template double sum(const BasicTensor<T>&);                                             \
  template double mean(const BasicTensor<T>&);                                            \
  template double max_abs_diff(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template std::uint64_t checksum(const BasicTensor<T>&);                                 \
  template void detail::assert_finite(const BasicTensor<T>&, const char*, int);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

}  // namespace refsr
