#include "m2m/eval/keyword.hpp"

#include <algorithm>
#include <numeric>

#include "m2m/config_io.hpp"
#include "m2m/nn/adam.hpp"
#include "m2m/nn/checkpoint.hpp"
#include "m2m/nn/losses.hpp"

namespace m2m::eval {

using nn::Tensor;

namespace {

constexpr int kInferenceBatch = 64;

Tensor<float> stack(const std::vector<const dsp::Grid*>& mfccs, const std::vector<float>& mean,
                    const std::vector<float>& sd) {
  const int n = static_cast<int>(mfccs.size());
  const int frames = mfccs.front()->rows;
  Tensor<float> x({n, 1, frames, dsp::kMfccCoefficients});
  for (int i = 0; i < n; ++i) {
    const dsp::Grid& m = *mfccs[i];
    if (m.rows != frames || m.cols != dsp::kMfccCoefficients) {
      throw ShapeError("keyword features must all be " + std::to_string(frames) + " x 24");
    }
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < m.cols; ++k) x.at(i, 0, t, k) = (m.at(t, k) - mean[k]) / sd[k];
    }
  }
  return x;
}

}  // namespace

std::vector<std::vector<double>> KeywordModel::probabilities(const std::vector<dsp::Grid>& mfccs) const {
  std::vector<std::vector<double>> out;
  out.reserve(mfccs.size());
  for (std::size_t start = 0; start < mfccs.size(); start += kInferenceBatch) {
    const std::size_t end = std::min(mfccs.size(), start + kInferenceBatch);
    std::vector<const dsp::Grid*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&mfccs[i]);
    const Tensor<float> p = nn::softmax(net.forward(stack(chunk, feature_mean, feature_std)));
    const int k = p.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.emplace_back(p.data() + i * k, p.data() + (i + 1) * k);
    }
  }
  return out;
}

int KeywordModel::classify(const dsp::Grid& mfcc) const { return classify(std::vector<dsp::Grid>{mfcc}).front(); }

std::vector<int> KeywordModel::classify(const std::vector<dsp::Grid>& mfccs) const {
  std::vector<int> labels;
  for (const auto& p : probabilities(mfccs)) {
    labels.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return labels;
}

void KeywordTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("keyword epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("keyword batch_size must be positive");
  if (!(lr > 0)) throw ConfigError("keyword learning rate must be positive");
}

KeywordModel train_keyword(const std::vector<LabeledClip>& data, const std::vector<std::string>& training_mics,
                           const KeywordTrainConfig& cfg, const dsp::StftConfig& stft) {
  cfg.validate();
  stft.validate();
  if (training_mics.empty()) throw ConfigError("a keyword model needs at least one training microphone");
  const auto& classes = keyword_classes();
  std::vector<int> per_class(classes.size(), 0);
  for (const auto& c : data) {
    if (c.label < 0 || c.label >= static_cast<int>(classes.size())) throw ConfigError("label out of range");
    if (c.clip.size() != static_cast<std::size_t>(stft.sample_rate_hz)) {
      throw DataError("keyword clip " + c.id + " is not one second long");
    }
    ++per_class[c.label];
  }
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (per_class[k] == 0) throw InsufficientDataError("class '" + classes[k] + "' has no training clips");
  }

  KeywordModel model;
  model.classes = classes;
  model.stft = stft;
  model.training_mics = training_mics;
  std::sort(model.training_mics.begin(), model.training_mics.end());
  model.net = KeywordNet<float>(static_cast<int>(classes.size()));
  model.net.init(cfg.seed);

  std::vector<dsp::Grid> feats;
  feats.reserve(data.size());
  for (const auto& c : data) feats.push_back(dsp::mfcc(c.clip, stft));

  std::vector<double> sum(dsp::kMfccCoefficients, 0.0), sq(dsp::kMfccCoefficients, 0.0);
  std::size_t rows = 0;
  for (const auto& f : feats) {
    for (int t = 0; t < f.rows; ++t) {
      for (int k = 0; k < f.cols; ++k) {
        sum[k] += f.at(t, k);
        sq[k] += static_cast<double>(f.at(t, k)) * f.at(t, k);
      }
    }
    rows += f.rows;
  }
  for (int k = 0; k < dsp::kMfccCoefficients; ++k) {
    const double mean = sum[k] / rows;
    model.feature_mean.push_back(static_cast<float>(mean));
    model.feature_std.push_back(static_cast<float>(std::sqrt(std::max(sq[k] / rows - mean * mean, 1e-8))));
  }

  std::vector<nn::Param<float>*> params;
  model.net.for_each_param([&](nn::Param<float>& p) { params.push_back(&p); });
  nn::Adam<float> adam(params, {cfg.lr, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(cfg.seed ^ 0x6b6579776f7264ULL);
  std::vector<std::size_t> order(feats.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const dsp::Grid*> chunk;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        chunk.push_back(&feats[order[i]]);
        labels.push_back(data[order[i]].label);
      }
      typename KeywordNet<float>::Tape tape;
      const Tensor<float> logits = model.net.forward(stack(chunk, model.feature_mean, model.feature_std), &tape);
      const auto loss = nn::softmax_cross_entropy(logits, labels);
      adam.zero_grad();
      model.net.backward(tape, loss.grad);
      adam.step();
    }
  }
  return model;
}

void save_keyword(const KeywordModel& model, const std::filesystem::path& path) {
  const json meta = {{"classes", model.classes},
                     {"training_mics", model.training_mics},
                     {"task", model.task},
                     {"stft", stft_to_json(model.stft)},
                     {"feature_contract", model.stft.contract()},
                     {"feature_hash", model.stft.hash()},
                     {"feature_mean", model.feature_mean},
                     {"feature_std", model.feature_std}};
  nn::Checkpoint ckpt{"keyword", meta.dump(), {}};
  auto& net = const_cast<KeywordNet<float>&>(model.net);  // for_each_param hands out mutable refs
  net.for_each_param([&](nn::Param<float>& p) { ckpt.tensors.push_back({p.name, p.value}); });
  nn::save_checkpoint(ckpt, path);
}

KeywordModel load_keyword(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.kind != "keyword") throw FormatError(path.string() + " is a '" + ckpt.kind + "' checkpoint, not keyword");
  KeywordModel m;
  try {
    const json j = json::parse(ckpt.metadata);
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.training_mics = j.at("training_mics").get<std::vector<std::string>>();
    m.task = j.at("task").get<std::string>();
    m.stft = stft_from_json(j.at("stft"));
    if (j.at("feature_hash").get<std::uint64_t>() != m.stft.hash()) {
      throw ContractError(path.string() + ": stored feature hash does not match its feature settings");
    }
    m.feature_mean = j.at("feature_mean").get<std::vector<float>>();
    m.feature_std = j.at("feature_std").get<std::vector<float>>();
  } catch (const json::exception& e) {
    throw FormatError("bad keyword metadata in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("bad keyword metadata in " + path.string() + ": " + e.what());
  }
  if (m.classes.size() < 2 || m.training_mics.empty() || m.feature_mean.size() != dsp::kMfccCoefficients ||
      m.feature_std.size() != dsp::kMfccCoefficients) {
    throw FormatError(path.string() + ": incomplete keyword metadata");
  }
  m.net = KeywordNet<float>(static_cast<int>(m.classes.size()));
  m.net.for_each_param([&](nn::Param<float>& p) {
    const auto& src = ckpt.get(p.name);
    if (src.shape() != p.value.shape()) throw FormatError("checkpoint tensor " + p.name + " has the wrong shape");
    p.value = src;
  });
  return m;
}

}  // namespace m2m::eval
