#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "m2m/cyclegan/losses.hpp"
#include "m2m/cyclegan/networks.hpp"
#include "m2m/dsp/features.hpp"
#include "m2m/dsp/segment.hpp"
#include "m2m/micsim.hpp"
#include "m2m/nn/adam.hpp"
#include "m2m/nn/checkpoint.hpp"

namespace m2m::cyclegan {

// A stack of equally sized normalized log-spectrogram patches.
struct PatchBank {
  std::string domain_id;
  std::vector<std::string> clip_ids;  // clips that contributed, in order
  dsp::PatchSize size;
  std::vector<float> data;  // count * freq * time, row-major per patch

  std::size_t count() const;
  nn::Tensor<float> batch(const std::vector<std::size_t>& indices) const;
  void append(const dsp::Grid& patch);
};

// Clips shorter than one STFT window are skipped; clips shorter than a patch
// are reflect-padded.
PatchBank make_patch_bank(const micsim::DomainDataset& domain, const dsp::StftConfig& cfg, dsp::PatchSize size,
                          int stride);

enum class TrainMode { Unpaired, Paired };

struct TrainConfig {
  LossWeights weights;
  double paired_weight = 10.0;  // L1 to the aligned target, Paired mode only
  nn::AdamConfig adam;
  int batch_size = 8;
  int epochs = 10;
  long total_steps = 0;  // > 0 overrides epochs: exactly this many updates
  int width = 32;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::Unpaired;

  void validate() const;
};

// A is the source (deployment) microphone, B the target (training) microphone.
struct ModelMeta {
  std::string source_domain;
  std::string target_domain;
  dsp::StftConfig stft;
  dsp::PatchSize patch;
  int width = 32;
};

struct CycleGanModel {
  Generator<float> g_ab{"g_ab"};
  Generator<float> g_ba{"g_ba"};
  Discriminator<float> d_a{"d_a"};
  Discriminator<float> d_b{"d_b"};
  ModelMeta meta;

  CycleGanModel() = default;
  CycleGanModel(ModelMeta m, std::uint64_t seed);
};

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  double adv_ab = 0, adv_ba = 0, cycle = 0, id = 0, d_a = 0, d_b = 0, paired = 0, gen_total = 0;
};

std::string training_log_csv(const std::vector<EpochLog>& log);

// Return false to stop after this epoch.
using EpochCallback = std::function<bool(const EpochLog&, const CycleGanModel&)>;

struct TrainResult {
  CycleGanModel model;
  std::vector<EpochLog> log;
};

// Each step updates both discriminators on the current generators' outputs,
// then both generators. Throws PairingViolationError when the banks share
// clips in Unpaired mode or are not aligned in Paired mode, and
// InsufficientDataError when either bank holds fewer patches than a batch.
TrainResult train(const PatchBank& a, const PatchBank& b, const TrainConfig& cfg, ModelMeta meta,
                  const EpochCallback& on_epoch = {});

enum class Direction { AtoB, BtoA };

// Same-shape output. The low `patch.freq` bins pass through the generator in
// non-overlapping time patches; higher bins are copied unchanged.
dsp::Spectrogram translate(const Generator<float>& g, const dsp::PatchSize& patch, const dsp::Spectrogram& spec);
dsp::Spectrogram translate(const CycleGanModel& model, const dsp::Spectrogram& spec, Direction dir = Direction::AtoB);

// Deployable half of a trained model: the source-to-target generator.
struct Translator {
  Generator<float> g{"g_ab"};
  ModelMeta meta;

  dsp::Spectrogram operator()(const dsp::Spectrogram& spec) const { return translate(g, meta.patch, spec); }
};

void save_model(const CycleGanModel& model, const std::filesystem::path& path);
CycleGanModel load_model(const std::filesystem::path& path);
void export_translator(const CycleGanModel& model, const std::filesystem::path& path);
// Accepts an export or a full training checkpoint.
Translator load_translator(const std::filesystem::path& path);

// Exposed for tests: generator and discriminator weights in checkpoint form.
template <typename Net>
void store_net(Net& net, nn::Checkpoint& ckpt) {
  net.for_each_param([&](nn::Param<float>& p) { ckpt.tensors.push_back({p.name, p.value}); });
  net.for_each_buffer([&](nn::Buffer<float> b) { ckpt.tensors.push_back({b.name, *b.tensor}); });
}

template <typename Net>
void restore_net(Net& net, const nn::Checkpoint& ckpt) {
  auto copy = [&](const std::string& name, nn::Tensor<float>& dst) {
    const auto& src = ckpt.get(name);
    if (src.shape() != dst.shape()) throw FormatError("checkpoint tensor " + name + " has the wrong shape");
    dst = src;
  };
  net.for_each_param([&](nn::Param<float>& p) { copy(p.name, p.value); });
  net.for_each_buffer([&](nn::Buffer<float> b) { copy(b.name, *b.tensor); });
}

}  // namespace m2m::cyclegan
