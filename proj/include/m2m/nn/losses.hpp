#pragma once

#include <cmath>
#include <vector>

#include "m2m/nn/tensor.hpp"

namespace m2m::nn {

template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;  // d value / d first argument
};

// mean |a - b|; the subgradient at a == b is 0.
template <typename T>
LossValue<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l1_mean");
  const double n = static_cast<double>(a.size());
  LossValue<T> out{0.0, Tensor<T>(a.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += std::abs(d);
    out.grad[i] = static_cast<T>((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
  }
  out.value = acc / n;
  return out;
}

// mean (a - target)^2
template <typename T>
LossValue<T> lsq_mean(const Tensor<T>& a, double target) {
  const double n = static_cast<double>(a.size());
  LossValue<T> out{0.0, Tensor<T>(a.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - target;
    acc += d * d;
    out.grad[i] = static_cast<T>(2.0 * d / n);
  }
  out.value = acc / n;
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (int i = 0; i < n; ++i) {
    const T* z = logits.data() + static_cast<std::size_t>(i) * k;
    double mx = z[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double s = 0.0;
    std::vector<double> e(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) s += (e[j] = std::exp(z[j] - mx));
    for (int j = 0; j < k; ++j) p[static_cast<std::size_t>(i) * k + j] = static_cast<T>(e[j] / s);
  }
  return p;
}

// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
LossValue<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  LossValue<T> out{0.0, softmax(logits)};
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ShapeError("softmax_cross_entropy: label out of range");
    T* g = out.grad.data() + static_cast<std::size_t>(i) * k;
    acc -= std::log(std::max(static_cast<double>(g[y]), 1e-30));
    g[y] -= T(1);
    for (int j = 0; j < k; ++j) g[j] /= static_cast<T>(n);
  }
  out.value = acc / n;
  return out;
}

}  // namespace m2m::nn
