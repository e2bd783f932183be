#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "m2m/nn/tensor.hpp"

namespace m2m::nn {

enum class Mode { Train, Eval };

enum class LayerKind { Conv2d, TransposeConv2d, BatchNorm, Dense };

// A learnable tensor and its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Non-learnable state that still belongs in a checkpoint (BatchNorm running stats).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int channels, height, width;  // the "image" side
  int kernel, stride, padding;
  int out_h, out_w;             // the "column" side

  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

inline int conv_out_dim(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// Unfolds one CHW image into a [C*k*k, out_h*out_w] column matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* row = cols + (static_cast<std::size_t>(c * k + kh) * k + kw) * g.cols();
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + kh;
          T* dst = row + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kw;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into a CHW image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* row = cols + (static_cast<std::size_t>(c * k + kh) * k + kw) * g.cols();
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kw;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  bool bias = true;
};

template <typename T>
struct ConvCache {
  Shape input_shape;
  AlignedVector<T> cols;  // one [rows, cols] block per sample
};

// Cross-correlation, weight layout [out, in, k, k].
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, ConvSpec spec)
      : spec_(spec),
        weight_(name + ".weight", {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
        bias_(name + ".bias", {spec.out_channels}) {}

  const ConvSpec& spec() const { return spec_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

  void init(std::mt19937_64& rng, double stddev) {
    fill_truncated_normal(weight_.value, stddev, rng);
    bias_.value.fill(T(0));
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(weight_);
    if (spec_.bias) fn(bias_);
  }

  ConvGeometry geometry(const Shape& in) const {
    if (in.size() != 4 || in[1] != spec_.in_channels) {
      throw ShapeError("conv2d expects [N," + std::to_string(spec_.in_channels) + ",H,W], got " + shape_str(in));
    }
    ConvGeometry g{in[1], in[2], in[3], spec_.kernel, spec_.stride, spec_.padding, 0, 0};
    if (in[2] + 2 * spec_.padding < spec_.kernel || in[3] + 2 * spec_.padding < spec_.kernel) {
      throw ShapeError("conv2d kernel larger than padded input " + shape_str(in));
    }
    g.out_h = conv_out_dim(in[2], spec_.kernel, spec_.stride, spec_.padding);
    g.out_w = conv_out_dim(in[3], spec_.kernel, spec_.stride, spec_.padding);
    return g;
  }

  Tensor<T> forward(const Tensor<T>& x, ConvCache<T>* cache = nullptr) const {
    const ConvGeometry g = geometry(x.shape());
    const int n = x.dim(0);
    const std::size_t block = static_cast<std::size_t>(g.rows()) * g.cols();
    AlignedVector<T> local;
    AlignedVector<T>& cols = cache ? cache->cols : local;
    cols.resize(block * (cache ? n : 1));
    Tensor<T> y({n, spec_.out_channels, g.out_h, g.out_w});
    ConstMatMap<T> w(weight_.value.data(), spec_.out_channels, g.rows());
    const std::size_t in_stride = x.size() / n;
    const std::size_t out_stride = y.size() / n;
    for (int i = 0; i < n; ++i) {
      T* col = cols.data() + (cache ? block * i : 0);
      im2col(x.data() + in_stride * i, g, col);
      MatMap<T> out(y.data() + out_stride * i, spec_.out_channels, g.cols());
      out.noalias() = w * ConstMatMap<T>(col, g.rows(), g.cols());
      if (spec_.bias) {
        for (int o = 0; o < spec_.out_channels; ++o) out.row(o).array() += bias_.value[o];
      }
    }
    if (cache) cache->input_shape = x.shape();
    return y;
  }

  // Accumulates parameter gradients, returns the input gradient.
  Tensor<T> backward(const ConvCache<T>& cache, const Tensor<T>& gy) {
    const ConvGeometry g = geometry(cache.input_shape);
    const int n = cache.input_shape[0];
    const std::size_t block = static_cast<std::size_t>(g.rows()) * g.cols();
    Tensor<T> gx(cache.input_shape);
    ConstMatMap<T> w(weight_.value.data(), spec_.out_channels, g.rows());
    MatMap<T> gw(weight_.grad.data(), spec_.out_channels, g.rows());
    AlignedVector<T> gcol(block);
    const std::size_t in_stride = gx.size() / n;
    const std::size_t out_stride = gy.size() / n;
    for (int i = 0; i < n; ++i) {
      ConstMatMap<T> gout(gy.data() + out_stride * i, spec_.out_channels, g.cols());
      ConstMatMap<T> col(cache.cols.data() + block * i, g.rows(), g.cols());
      gw.noalias() += gout * col.transpose();
      if (spec_.bias) {
        for (int o = 0; o < spec_.out_channels; ++o) {
          double acc = 0.0;
          for (int c = 0; c < g.cols(); ++c) acc += gout(o, c);
          bias_.grad[o] += static_cast<T>(acc);
        }
      }
      MatMap<T>(gcol.data(), g.rows(), g.cols()).noalias() = w.transpose() * gout;
      col2im(gcol.data(), g, gx.data() + in_stride * i);
    }
    return gx;
  }

 private:
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
struct TransposeConvCache {
  Tensor<T> input;
};

// Transposed convolution (the input-gradient of Conv2d with the same
// hyperparameters). Weight layout [in, out, k, k].
template <typename T>
class TransposeConv2d {
 public:
  TransposeConv2d() = default;
  TransposeConv2d(std::string name, ConvSpec spec)
      : spec_(spec),
        weight_(name + ".weight", {spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}),
        bias_(name + ".bias", {spec.out_channels}) {}

  const ConvSpec& spec() const { return spec_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  void init(std::mt19937_64& rng, double stddev) {
    fill_truncated_normal(weight_.value, stddev, rng);
    bias_.value.fill(T(0));
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(weight_);
    if (spec_.bias) fn(bias_);
  }

  // Geometry of the equivalent forward conv: image = our output, columns = our input.
  ConvGeometry geometry(const Shape& in) const {
    if (in.size() != 4 || in[1] != spec_.in_channels) {
      throw ShapeError("transpose_conv2d expects [N," + std::to_string(spec_.in_channels) + ",H,W], got " +
                       shape_str(in));
    }
    const int oh = (in[2] - 1) * spec_.stride - 2 * spec_.padding + spec_.kernel;
    const int ow = (in[3] - 1) * spec_.stride - 2 * spec_.padding + spec_.kernel;
    if (oh <= 0 || ow <= 0) throw ShapeError("transpose_conv2d output would be empty for " + shape_str(in));
    return ConvGeometry{spec_.out_channels, oh, ow, spec_.kernel, spec_.stride, spec_.padding, in[2], in[3]};
  }

  Tensor<T> forward(const Tensor<T>& x, TransposeConvCache<T>* cache = nullptr) const {
    const ConvGeometry g = geometry(x.shape());
    const int n = x.dim(0);
    Tensor<T> y({n, spec_.out_channels, g.height, g.width});
    ConstMatMap<T> w(weight_.value.data(), spec_.in_channels, g.rows());
    AlignedVector<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
    const std::size_t in_stride = x.size() / n;
    const std::size_t out_stride = y.size() / n;
    for (int i = 0; i < n; ++i) {
      ConstMatMap<T> xin(x.data() + in_stride * i, spec_.in_channels, g.cols());
      MatMap<T>(col.data(), g.rows(), g.cols()).noalias() = w.transpose() * xin;
      T* out = y.data() + out_stride * i;
      col2im(col.data(), g, out);
      if (spec_.bias) {
        const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
        for (int o = 0; o < spec_.out_channels; ++o) {
          T* p = out + plane * o;
          for (std::size_t j = 0; j < plane; ++j) p[j] += bias_.value[o];
        }
      }
    }
    if (cache) cache->input = x;
    return y;
  }

  Tensor<T> backward(const TransposeConvCache<T>& cache, const Tensor<T>& gy) {
    const Tensor<T>& x = cache.input;
    const ConvGeometry g = geometry(x.shape());
    const int n = x.dim(0);
    Tensor<T> gx(x.shape());
    ConstMatMap<T> w(weight_.value.data(), spec_.in_channels, g.rows());
    MatMap<T> gw(weight_.grad.data(), spec_.in_channels, g.rows());
    AlignedVector<T> gcol(static_cast<std::size_t>(g.rows()) * g.cols());
    const std::size_t in_stride = x.size() / n;
    const std::size_t out_stride = gy.size() / n;
    const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
    for (int i = 0; i < n; ++i) {
      const T* gout = gy.data() + out_stride * i;
      im2col(gout, g, gcol.data());
      ConstMatMap<T> gc(gcol.data(), g.rows(), g.cols());
      ConstMatMap<T> xin(x.data() + in_stride * i, spec_.in_channels, g.cols());
      gw.noalias() += xin * gc.transpose();
      MatMap<T>(gx.data() + in_stride * i, spec_.in_channels, g.cols()).noalias() = w * gc;
      if (spec_.bias) {
        for (int o = 0; o < spec_.out_channels; ++o) {
          const T* p = gout + plane * o;
          double s = 0.0;
          for (std::size_t j = 0; j < plane; ++j) s += p[j];
          bias_.grad[o] += static_cast<T>(s);
        }
      }
    }
    return gx;
  }

 private:
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;          // x_hat
  std::vector<double> inv_std;   // per channel
  Mode mode = Mode::Train;
};

// Per-channel batch normalization over (N, H, W). Rank-2 inputs are treated
// as [N, C, 1, 1].
template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels)
      : channels_(channels),
        scale_(name + ".scale", {channels}),
        shift_(name + ".shift", {channels}),
        running_mean_({channels}, T(0)),
        running_var_({channels}, T(1)),
        name_(std::move(name)) {
    scale_.value.fill(T(1));
  }

  Param<T>& scale() { return scale_; }
  Param<T>& shift() { return shift_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(scale_);
    fn(shift_);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    fn(Buffer<T>{name_ + ".running_mean", &running_mean_});
    fn(Buffer<T>{name_ + ".running_var", &running_var_});
  }

  // Train mode uses batch statistics and updates the running averages.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, BatchNormCache<T>* cache = nullptr) {
    if (mode == Mode::Eval) return infer(x, cache);
    const auto [n, plane] = layout(x.shape());
    if (n < 2) throw BatchTooSmallError("batch_norm in Train mode needs a batch of at least 2");
    const std::size_t count = static_cast<std::size_t>(n) * plane;
    std::vector<double> mean(static_cast<std::size_t>(channels_)), var(mean.size());
    for (int c = 0; c < channels_; ++c) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double m = s / static_cast<double>(count);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - m;
          sq += d * d;
        }
      }
      mean[c] = m;
      var[c] = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      running_mean_[c] = static_cast<T>((1.0 - kMomentum) * running_mean_[c] + kMomentum * m);
      running_var_[c] = static_cast<T>((1.0 - kMomentum) * running_var_[c] + kMomentum * unbiased);
    }
    return normalize(x, mean, var, Mode::Train, cache);
  }

  // Eval mode: normalizes with the running statistics, no state change.
  Tensor<T> infer(const Tensor<T>& x, BatchNormCache<T>* cache = nullptr) const {
    layout(x.shape());
    std::vector<double> mean(running_mean_.storage().begin(), running_mean_.storage().end());
    std::vector<double> var(running_var_.storage().begin(), running_var_.storage().end());
    return normalize(x, mean, var, Mode::Eval, cache);
  }

  Tensor<T> backward(const BatchNormCache<T>& cache, const Tensor<T>& gy) {
    const auto [n, plane] = layout(gy.shape());
    const std::size_t count = static_cast<std::size_t>(n) * plane;
    const Tensor<T>& xhat = cache.normalized;
    Tensor<T> gx(gy.shape());
    for (int c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_g += gy[off + j];
          sum_gx += static_cast<double>(gy[off + j]) * xhat[off + j];
        }
      }
      scale_.grad[c] += static_cast<T>(sum_gx);
      shift_.grad[c] += static_cast<T>(sum_g);
      const double g = scale_.value[c];
      const double is = cache.inv_std[c];
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          if (cache.mode == Mode::Train) {
            const double m = static_cast<double>(count);
            gx[off + j] = static_cast<T>(g * is / m * (m * gy[off + j] - sum_g - xhat[off + j] * sum_gx));
          } else {
            gx[off + j] = static_cast<T>(g * is * gy[off + j]);
          }
        }
      }
    }
    return gx;
  }

 private:
  std::pair<int, std::size_t> layout(const Shape& s) const {
    if ((s.size() != 4 && s.size() != 2) || s[1] != channels_) {
      throw ShapeError("batch_norm expects " + std::to_string(channels_) + " channels, got " + shape_str(s));
    }
    const std::size_t plane = s.size() == 4 ? static_cast<std::size_t>(s[2]) * s[3] : 1;
    return {s[0], plane};
  }

  Tensor<T> normalize(const Tensor<T>& x, const std::vector<double>& mean, const std::vector<double>& var, Mode mode,
                      BatchNormCache<T>* cache) const {
    const auto [n, plane] = layout(x.shape());
    Tensor<T> y(x.shape());
    Tensor<T> xhat;
    if (cache) xhat = Tensor<T>(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(channels_));
    for (int c = 0; c < channels_; ++c) {
      const double is = 1.0 / std::sqrt(var[c] + kEps);
      inv_std[c] = is;
      const double g = scale_.value[c], b = shift_.value[c];
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double h = (x[off + j] - mean[c]) * is;
          if (cache) xhat[off + j] = static_cast<T>(h);
          y[off + j] = static_cast<T>(g * h + b);
        }
      }
    }
    if (cache) {
      cache->normalized = std::move(xhat);
      cache->inv_std = std::move(inv_std);
      cache->mode = mode;
    }
    return y;
  }

  int channels_ = 0;
  Param<T> scale_;
  Param<T> shift_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  std::string name_;
};

template <typename T>
struct DenseCache {
  Tensor<T> input;  // flattened [N, in]
  Shape input_shape;
};

// Fully connected layer over the flattened trailing dimensions.
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, int in_features, int out_features)
      : in_(in_features),
        out_(out_features),
        weight_(name + ".weight", {out_features, in_features}),
        bias_(name + ".bias", {out_features}) {}

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  void init(std::mt19937_64& rng, double stddev) {
    fill_truncated_normal(weight_.value, stddev, rng);
    bias_.value.fill(T(0));
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(weight_);
    fn(bias_);
  }

  Tensor<T> forward(const Tensor<T>& x, DenseCache<T>* cache = nullptr) const {
    const int n = x.dim(0);
    if (x.size() != static_cast<std::size_t>(n) * in_) {
      throw ShapeError("dense expects " + std::to_string(in_) + " features per sample, got " + shape_str(x.shape()));
    }
    Tensor<T> y({n, out_});
    ConstMatMap<T> xin(x.data(), n, in_);
    ConstMatMap<T> w(weight_.value.data(), out_, in_);
    MatMap<T> out(y.data(), n, out_);
    out.noalias() = xin * w.transpose();
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < out_; ++o) out(i, o) += bias_.value[o];
    }
    if (cache) {
      cache->input = x;
      cache->input.reshape({n, in_});
      cache->input_shape = x.shape();
    }
    return y;
  }

  Tensor<T> backward(const DenseCache<T>& cache, const Tensor<T>& gy) {
    const int n = gy.dim(0);
    ConstMatMap<T> g(gy.data(), n, out_);
    ConstMatMap<T> xin(cache.input.data(), n, in_);
    MatMap<T>(weight_.grad.data(), out_, in_).noalias() += g.transpose() * xin;
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < out_; ++o) bias_.grad[o] += g(i, o);
    }
    Tensor<T> gx(cache.input_shape);
    MatMap<T>(gx.data(), n, in_).noalias() = g * ConstMatMap<T>(weight_.value.data(), out_, in_);
    return gx;
  }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_;
  Param<T> bias_;
};

// Elementwise activations. Backward passes take the forward input (relu,
// leaky relu) or output (tanh). The derivative at the relu kink is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
  return gx;
}

inline constexpr double kLeakySlope = 0.2;

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = kLeakySlope) {
  Tensor<T> y(x.shape());
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : s * x[i];
  return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& gy, double slope = kLeakySlope) {
  Tensor<T> gx(x.shape());
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : s * gy[i];
  return gx;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& gy) {
  Tensor<T> gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * (T(1) - y[i] * y[i]);
  return gx;
}

}  // namespace m2m::nn
