#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "m2m/error.hpp"

namespace m2m::nn {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. Rank-4 tensors are NCHW.
// 64-byte aligned storage. Eigen peels unaligned heads off reductions and
// matrix-vector products, so the summation order (and the low bits of the
// result) would otherwise depend on where the allocator placed a buffer.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (int d : shape_) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    values_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, const std::vector<T>& values) : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("value count " + std::to_string(values_.size()) + " does not match shape " +
                       shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  AlignedVector<T>& storage() { return values_; }
  const AlignedVector<T>& storage() const { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& at(int n, int c, int h, int w) { return values_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return values_[offset(n, c, h, w)]; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  void reshape(Shape shape) {
    if (shape_size(shape) != values_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
  }

  // Samples [begin, begin + count) along the leading axis.
  Tensor slice(int begin, int count) const {
    Shape s = shape_;
    s[0] = count;
    const std::size_t stride = values_.size() / static_cast<std::size_t>(shape_[0]);
    Tensor out(s);
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(stride * begin), stride * count,
                out.values_.begin());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(values_.begin(), values_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  AlignedVector<T> values_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& where) {
  if (!t.all_finite()) throw NumericError("non-finite value produced by " + where);
}

// Concatenates two NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    T* dst = out.data() + static_cast<std::size_t>(i) * (ca + cb) * plane;
    std::copy_n(a.data() + static_cast<std::size_t>(i) * ca * plane, ca * plane, dst);
    std::copy_n(b.data() + static_cast<std::size_t>(i) * cb * plane, cb * plane, dst + ca * plane);
  }
  return out;
}

// Inverse of concat_channels for gradients: splits off the first `ca` channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int ca) {
  const int n = g.dim(0), c = g.dim(1), cb = c - ca;
  const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  Tensor<T> a({n, ca, g.dim(2), g.dim(3)});
  Tensor<T> b({n, cb, g.dim(2), g.dim(3)});
  for (int i = 0; i < n; ++i) {
    const T* src = g.data() + static_cast<std::size_t>(i) * c * plane;
    std::copy_n(src, ca * plane, a.data() + static_cast<std::size_t>(i) * ca * plane);
    std::copy_n(src + ca * plane, cb * plane, b.data() + static_cast<std::size_t>(i) * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  require_same_shape(dst, src, "add_inplace");
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

// Normal(0, std) truncated to +-2 std by resampling.
template <typename T>
void fill_truncated_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.values()) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(z * stddev);
  }
}

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace m2m::nn
