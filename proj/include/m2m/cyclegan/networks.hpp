#pragma once

#include <array>
#include <random>
#include <string>
#include <type_traits>

#include "m2m/nn/layers.hpp"

namespace m2m::cyclegan {

using nn::Mode;
using nn::Tensor;

inline constexpr double kInitStd = 0.02;

namespace detail {

template <typename BN, typename T>
Tensor<T> bn_apply(BN& bn, const Tensor<T>& x, Mode mode, nn::BatchNormCache<T>* cache) {
  if constexpr (std::is_const_v<BN>) {
    return bn.infer(x, cache);
  } else {
    return bn.forward(x, mode, cache);
  }
}

}  // namespace detail

// U-Net style translator: 3 strided conv layers, 3 residual blocks with
// BatchNorm between them, 3 transposed conv layers fed by channel-concatenated
// skips from the mirror encoder layer, tanh output. Spatial dims must be
// multiples of 8; the output has the input's shape.
template <typename T>
class Generator {
 public:
  static constexpr int kLevels = 3;
  static constexpr int kResBlocks = 3;

  struct Tape {
    std::array<nn::ConvCache<T>, kLevels> enc;
    std::array<Tensor<T>, kLevels> enc_pre;  // pre-relu
    std::array<Tensor<T>, kLevels> enc_out;  // skip sources
    std::array<nn::ConvCache<T>, kResBlocks> res_a, res_b;
    std::array<Tensor<T>, kResBlocks> res_mid_pre;
    std::array<nn::BatchNormCache<T>, kResBlocks - 1> bn;
    std::array<nn::TransposeConvCache<T>, kLevels> dec;
    std::array<Tensor<T>, kLevels - 1> dec_pre;
    Tensor<T> output;
  };

  explicit Generator(std::string name = "g", int width = 32) : name_(std::move(name)), width_(width) {
    const int ch[kLevels] = {width, 2 * width, 4 * width};
    int in = 1;
    for (int l = 0; l < kLevels; ++l) {
      enc_[l] = nn::Conv2d<T>(name_ + ".enc" + std::to_string(l), {in, ch[l], 4, 2, 1, true});
      in = ch[l];
    }
    for (int b = 0; b < kResBlocks; ++b) {
      const std::string p = name_ + ".res" + std::to_string(b);
      res_a_[b] = nn::Conv2d<T>(p + ".conv_a", {in, in, 3, 1, 1, true});
      // A bias feeding straight into BatchNorm is cancelled by the mean.
      res_b_[b] = nn::Conv2d<T>(p + ".conv_b", {in, in, 3, 1, 1, b == kResBlocks - 1});
      if (b < kResBlocks - 1) bn_[b] = nn::BatchNorm2d<T>(p + ".bn", in);
    }
    // dec0 consumes body + enc2, dec1 consumes dec0 + enc1, dec2 consumes dec1 + enc0.
    dec_[0] = nn::TransposeConv2d<T>(name_ + ".dec0", {ch[2] + ch[2], ch[1], 4, 2, 1, true});
    dec_[1] = nn::TransposeConv2d<T>(name_ + ".dec1", {ch[1] + ch[1], ch[0], 4, 2, 1, true});
    dec_[2] = nn::TransposeConv2d<T>(name_ + ".dec2", {ch[0] + ch[0], 1, 4, 2, 1, true});
  }

  const std::string& name() const { return name_; }
  int width() const { return width_; }

  void init(std::uint64_t seed, double stddev = kInitStd) {
    std::mt19937_64 rng(seed);
    for (auto& l : enc_) l.init(rng, stddev);
    for (int b = 0; b < kResBlocks; ++b) {
      res_a_[b].init(rng, stddev);
      res_b_[b].init(rng, stddev);
    }
    for (auto& l : dec_) l.init(rng, stddev);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& l : enc_) l.for_each_param(fn);
    for (int b = 0; b < kResBlocks; ++b) {
      res_a_[b].for_each_param(fn);
      res_b_[b].for_each_param(fn);
      if (b < kResBlocks - 1) bn_[b].for_each_param(fn);
    }
    for (auto& l : dec_) l.for_each_param(fn);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    for (auto& b : bn_) b.for_each_buffer(fn);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for_each_param([&](nn::Param<T>& p) { out.push_back(&p); });
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Tape* tape = nullptr) { return run(*this, x, mode, tape); }

  // Eval-mode forward without tape; safe to call concurrently on a frozen model.
  Tensor<T> infer(const Tensor<T>& x) const { return run(*this, x, Mode::Eval, nullptr); }

  Tensor<T> backward(const Tape& tape, const Tensor<T>& gy) {
    Tensor<T> g = nn::tanh_backward(tape.output, gy);
    std::array<Tensor<T>, kLevels> skip_grad;
    for (int dl = kLevels - 1; dl >= 0; --dl) {
      const int l = kLevels - 1 - dl;  // encoder level feeding this decoder's skip
      Tensor<T> gcat = dec_[dl].backward(tape.dec[dl], g);
      auto [gprev, gskip] = nn::split_channels(gcat, gcat.dim(1) / 2);
      skip_grad[l] = std::move(gskip);
      g = std::move(gprev);
      if (dl > 0) g = nn::relu_backward(tape.dec_pre[dl - 1], g);
    }
    for (int b = kResBlocks - 1; b >= 0; --b) {
      if (b < kResBlocks - 1) g = bn_[b].backward(tape.bn[b], g);
      Tensor<T> gmid = res_b_[b].backward(tape.res_b[b], g);
      gmid = nn::relu_backward(tape.res_mid_pre[b], gmid);
      nn::add_inplace(g, res_a_[b].backward(tape.res_a[b], gmid));
    }
    for (int l = kLevels - 1; l >= 0; --l) {
      nn::add_inplace(g, skip_grad[l]);
      g = nn::relu_backward(tape.enc_pre[l], g);
      g = enc_[l].backward(tape.enc[l], g);
    }
    return g;
  }

 private:
  template <typename Self>
  static Tensor<T> run(Self& self, const Tensor<T>& x, Mode mode, Tape* tape) {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
      throw ShapeError("generator expects [N,1,H,W] with H, W multiples of 8, got " + nn::shape_str(x.shape()));
    }
    std::array<Tensor<T>, kLevels> skips;
    Tensor<T> h = x;
    for (int l = 0; l < kLevels; ++l) {
      Tensor<T> pre = self.enc_[l].forward(h, tape ? &tape->enc[l] : nullptr);
      h = nn::relu(pre);
      if (tape) tape->enc_pre[l] = std::move(pre);
      skips[l] = h;
    }
    for (int b = 0; b < kResBlocks; ++b) {
      Tensor<T> mid = self.res_a_[b].forward(h, tape ? &tape->res_a[b] : nullptr);
      Tensor<T> act = nn::relu(mid);
      if (tape) tape->res_mid_pre[b] = std::move(mid);
      nn::add_inplace(h, self.res_b_[b].forward(act, tape ? &tape->res_b[b] : nullptr));
      if (b < kResBlocks - 1) h = detail::bn_apply(self.bn_[b], h, mode, tape ? &tape->bn[b] : nullptr);
    }
    nn::require_finite(h, self.name_ + " body");
    for (int dl = 0; dl < kLevels; ++dl) {
      const int l = kLevels - 1 - dl;
      Tensor<T> pre = self.dec_[dl].forward(nn::concat_channels(h, skips[l]), tape ? &tape->dec[dl] : nullptr);
      if (dl < kLevels - 1) {
        h = nn::relu(pre);
        if (tape) tape->dec_pre[dl] = std::move(pre);
      } else {
        h = nn::tanh(pre);
      }
    }
    nn::require_finite(h, self.name_ + " output");
    if (tape) {
      tape->enc_out = std::move(skips);
      tape->output = h;
    }
    return h;
  }

  std::string name_;
  int width_;
  std::array<nn::Conv2d<T>, kLevels> enc_;
  std::array<nn::Conv2d<T>, kResBlocks> res_a_, res_b_;
  std::array<nn::BatchNorm2d<T>, kResBlocks - 1> bn_;
  std::array<nn::TransposeConv2d<T>, kLevels> dec_;
};

// Fully convolutional critic: 4 stride-2 conv layers (32, 64, 128, 256
// channels at width 32) with BatchNorm between consecutive layers and
// leaky-relu(0.2), then a 1-channel 3x3 head averaged to one unbounded score
// per sample. Spatial dims must be multiples of 16.
template <typename T>
class Discriminator {
 public:
  static constexpr int kLayers = 4;

  struct Tape {
    std::array<nn::ConvCache<T>, kLayers> conv;
    std::array<nn::BatchNormCache<T>, kLayers - 1> bn;
    std::array<Tensor<T>, kLayers> pre;  // pre-activation
    nn::ConvCache<T> head;
    nn::Shape head_shape;
  };

  explicit Discriminator(std::string name = "d", int width = 32) : name_(std::move(name)) {
    int in = 1;
    for (int l = 0; l < kLayers; ++l) {
      const int out = width << l;
      conv_[l] = nn::Conv2d<T>(name_ + ".conv" + std::to_string(l), {in, out, 4, 2, 1, l == 0});
      if (l > 0) bn_[l - 1] = nn::BatchNorm2d<T>(name_ + ".bn" + std::to_string(l), out);
      in = out;
    }
    head_ = nn::Conv2d<T>(name_ + ".head", {in, 1, 3, 1, 1, true});
  }

  const std::string& name() const { return name_; }

  void init(std::uint64_t seed, double stddev = kInitStd) {
    std::mt19937_64 rng(seed);
    for (auto& l : conv_) l.init(rng, stddev);
    head_.init(rng, stddev);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (int l = 0; l < kLayers; ++l) {
      conv_[l].for_each_param(fn);
      if (l > 0) bn_[l - 1].for_each_param(fn);
    }
    head_.for_each_param(fn);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    for (auto& b : bn_) b.for_each_buffer(fn);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for_each_param([&](nn::Param<T>& p) { out.push_back(&p); });
    return out;
  }

  // Returns scores of shape [N, 1].
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Tape* tape = nullptr) { return run(*this, x, mode, tape); }
  Tensor<T> infer(const Tensor<T>& x) const { return run(*this, x, Mode::Eval, nullptr); }

  Tensor<T> backward(const Tape& tape, const Tensor<T>& gscore) {
    const nn::Shape& hs = tape.head_shape;
    const std::size_t plane = static_cast<std::size_t>(hs[2]) * hs[3];
    Tensor<T> gmap(hs);
    for (int i = 0; i < hs[0]; ++i) {
      const T v = gscore[static_cast<std::size_t>(i)] / static_cast<T>(plane);
      std::fill_n(gmap.data() + plane * i, plane, v);
    }
    Tensor<T> g = head_.backward(tape.head, gmap);
    for (int l = kLayers - 1; l >= 0; --l) {
      g = nn::leaky_relu_backward(tape.pre[l], g);
      if (l > 0) g = bn_[l - 1].backward(tape.bn[l - 1], g);
      g = conv_[l].backward(tape.conv[l], g);
    }
    return g;
  }

 private:
  template <typename Self>
  static Tensor<T> run(Self& self, const Tensor<T>& x, Mode mode, Tape* tape) {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0) {
      throw ShapeError("discriminator expects [N,1,H,W] with H, W multiples of 16, got " +
                       nn::shape_str(x.shape()));
    }
    Tensor<T> h = x;
    for (int l = 0; l < kLayers; ++l) {
      Tensor<T> pre = self.conv_[l].forward(h, tape ? &tape->conv[l] : nullptr);
      if (l > 0) pre = detail::bn_apply(self.bn_[l - 1], pre, mode, tape ? &tape->bn[l - 1] : nullptr);
      h = nn::leaky_relu(pre);
      if (tape) tape->pre[l] = std::move(pre);
    }
    Tensor<T> map = self.head_.forward(h, tape ? &tape->head : nullptr);
    const int n = map.dim(0);
    const std::size_t plane = static_cast<std::size_t>(map.dim(2)) * map.dim(3);
    Tensor<T> score({n, 1});
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += map[plane * i + j];
      score[static_cast<std::size_t>(i)] = static_cast<T>(s / static_cast<double>(plane));
    }
    nn::require_finite(score, self.name_ + " score");
    if (tape) tape->head_shape = map.shape();
    return score;
  }

  std::string name_;
  std::array<nn::Conv2d<T>, kLayers> conv_;
  std::array<nn::BatchNorm2d<T>, kLayers - 1> bn_;
  nn::Conv2d<T> head_;
};

}  // namespace m2m::cyclegan
