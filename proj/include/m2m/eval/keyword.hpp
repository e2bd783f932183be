#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m2m/dsp/features.hpp"
#include "m2m/eval/corpus.hpp"
#include "m2m/nn/layers.hpp"

namespace m2m::eval {

// conv 1->16 (3x3) -> relu -> conv 16->32 (3x3, stride 2) -> relu -> mean over
// time -> dense to class logits. Input is [N, 1, frames, 24] MFCC.
template <typename T>
class KeywordNet {
 public:
  KeywordNet() = default;
  explicit KeywordNet(int classes)
      : conv1_("kw.conv1", {1, 16, 3, 1, 1, true}),
        conv2_("kw.conv2", {16, 32, 3, 2, 1, true}),
        head_("kw.head", 32 * kPooledCoefficients, classes) {}

  static constexpr int kPooledCoefficients = (dsp::kMfccCoefficients + 1) / 2;

  int classes() const { return head_.out_features(); }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    conv1_.init(rng, std::sqrt(2.0 / 9.0));
    conv2_.init(rng, std::sqrt(2.0 / (16 * 9.0)));
    head_.init(rng, std::sqrt(1.0 / (32 * kPooledCoefficients)));
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    conv1_.for_each_param(fn);
    conv2_.for_each_param(fn);
    head_.for_each_param(fn);
  }

  struct Tape {
    nn::ConvCache<T> c1, c2;
    nn::DenseCache<T> head;
    nn::Tensor<T> a1, a2;  // pre-activations
    nn::Shape pooled_from;
  };

  nn::Tensor<T> forward(const nn::Tensor<T>& x, Tape* tape = nullptr) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(3) != dsp::kMfccCoefficients) {
      throw ShapeError("keyword net expects [N,1,frames,24], got " + nn::shape_str(x.shape()));
    }
    nn::Tensor<T> a1 = conv1_.forward(x, tape ? &tape->c1 : nullptr);
    nn::Tensor<T> a2 = conv2_.forward(nn::relu(a1), tape ? &tape->c2 : nullptr);
    const nn::Tensor<T> h = nn::relu(a2);
    const int n = h.dim(0), c = h.dim(1), frames = h.dim(2), w = h.dim(3);
    nn::Tensor<T> pooled({n, c * w});
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        for (int k = 0; k < w; ++k) {
          double acc = 0.0;
          for (int t = 0; t < frames; ++t) acc += h.at(i, ch, t, k);
          pooled[static_cast<std::size_t>(i) * c * w + ch * w + k] = static_cast<T>(acc / frames);
        }
      }
    }
    if (tape) {
      tape->a1 = std::move(a1);
      tape->a2 = std::move(a2);
      tape->pooled_from = h.shape();
    }
    return head_.forward(pooled, tape ? &tape->head : nullptr);
  }

  void backward(const Tape& tape, const nn::Tensor<T>& grad_logits) {
    const nn::Tensor<T> gp = head_.backward(tape.head, grad_logits);
    const nn::Shape& s = tape.pooled_from;
    nn::Tensor<T> gh(s);
    const int n = s[0], c = s[1], frames = s[2], w = s[3];
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        for (int k = 0; k < w; ++k) {
          const T g = gp[static_cast<std::size_t>(i) * c * w + ch * w + k] / static_cast<T>(frames);
          for (int t = 0; t < frames; ++t) gh.at(i, ch, t, k) = g;
        }
      }
    }
    const nn::Tensor<T> g1 = conv2_.backward(tape.c2, nn::relu_backward(tape.a2, gh));
    conv1_.backward(tape.c1, nn::relu_backward(tape.a1, g1));
  }

 private:
  nn::Conv2d<T> conv1_, conv2_;
  nn::Dense<T> head_;
};

struct KeywordModel {
  KeywordNet<float> net;
  std::vector<std::string> classes;
  dsp::StftConfig stft;
  std::vector<std::string> training_mics;
  std::string task = "keyword-spotting";
  // Per-coefficient standardization fitted on the training set.
  std::vector<float> feature_mean, feature_std;

  // [frames x 24] MFCC grids, all with the same frame count. Rows sum to 1.
  std::vector<std::vector<double>> probabilities(const std::vector<dsp::Grid>& mfccs) const;
  int classify(const dsp::Grid& mfcc) const;
  std::vector<int> classify(const std::vector<dsp::Grid>& mfccs) const;
};

struct KeywordTrainConfig {
  int epochs = 25;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

// Clips must all be one second long. InsufficientDataError when a class has
// no samples or fewer than two classes are present.
KeywordModel train_keyword(const std::vector<LabeledClip>& data, const std::vector<std::string>& training_mics,
                           const KeywordTrainConfig& cfg = {}, const dsp::StftConfig& stft = {});

// Checkpoint kind "keyword"; metadata carries classes, mics, the feature
// contract and its hash, and the standardization.
void save_keyword(const KeywordModel& model, const std::filesystem::path& path);
KeywordModel load_keyword(const std::filesystem::path& path);

}  // namespace m2m::eval
