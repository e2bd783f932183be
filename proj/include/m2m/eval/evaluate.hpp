#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "m2m/calibrate.hpp"
#include "m2m/config_io.hpp"
#include "m2m/cyclegan/model.hpp"
#include "m2m/eval/keyword.hpp"

namespace m2m::eval {

inline constexpr double kPsnrRange = 2.0;  // normalized bins span [-1, 1]
inline constexpr double kPsnrCap = 100.0;

// 10 log10(range^2 / MSE), capped at kPsnrCap. ShapeError on unequal shapes.
double psnr(const dsp::Grid& a, const dsp::Grid& b);
double psnr(const dsp::Spectrogram& a, const dsp::Spectrogram& b);

enum class Pipeline { Unmodified, Calibrated, Mic2Mic, PairedGan };

std::string to_string(Pipeline p);
// Accepts "unmodified", "calibrated", "mic2mic", "paired-gan"; ConfigError otherwise.
Pipeline parse_pipeline(const std::string& name);

// Artifacts a pipeline may need. Mic2Mic and PairedGan need a translator,
// Calibrated needs an offset.
struct PipelineArtifacts {
  const cyclegan::Translator* translator = nullptr;
  const calibrate::CalibrationOffset* offset = nullptr;
};

void require_artifacts(Pipeline p, const PipelineArtifacts& artifacts);

// The spectrogram the pipeline hands to feature extraction: log-normalized,
// after translation or calibration.
dsp::Spectrogram pipeline_spectrogram(const dsp::AudioClip& clip, Pipeline p, const PipelineArtifacts& artifacts,
                                      const dsp::StftConfig& cfg);
// MFCC input for the keyword model.
dsp::Grid pipeline_features(const dsp::AudioClip& clip, Pipeline p, const PipelineArtifacts& artifacts,
                            const dsp::StftConfig& cfg);

struct EvalReport {
  std::string train_domain;
  std::string test_domain;
  Pipeline pipeline = Pipeline::Unmodified;
  double accuracy = 0.0;
  std::optional<double> psnr_mean;  // needs aligned reference clips
  std::optional<double> recovery;
  std::optional<double> recovery_clamped;
  std::size_t clips = 0;
};

json report_to_json(const EvalReport& r);
// One CSV row: train,test,pipeline,accuracy,psnr_mean,recovery,recovery_clamped,clips.
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);

// Classifies every clip through the pipeline. When `aligned` is given (the
// same clips rendered by the training microphone, matched by id), psnr_mean is
// the mean PSNR between the pipeline spectrogram and the aligned one.
// ConfigError when the pipeline's artifact is missing.
EvalReport evaluate(const KeywordModel& model, const std::vector<LabeledClip>& test, Pipeline pipeline,
                    const PipelineArtifacts& artifacts, const std::string& train_domain,
                    const std::string& test_domain, const std::vector<LabeledClip>* aligned = nullptr);

struct Recovery {
  double raw = 0.0;
  double clamped = 0.0;  // to [0, 1]
};

// (treated - unmodified) / (upper - unmodified). UndefinedRecoveryError when upper <= unmodified.
Recovery recovery(double upper, double unmodified, double treated);

// Fills recovery fields of `treated` from the other two reports; leaves them
// empty when recovery is undefined.
void attach_recovery(EvalReport& treated, const EvalReport& upper, const EvalReport& unmodified);

// Per-epoch hook for the model trained at `minutes`; return false to stop early.
using SweepEpochCallback =
    std::function<bool(double minutes, const cyclegan::EpochLog&, const cyclegan::CycleGanModel&)>;

struct SweepSetup {
  std::vector<micsim::SourceClip> pool;  // unlabeled audio, split unpaired between the two microphones
  micsim::MicProfile source_mic;         // deployment microphone (A)
  micsim::MicProfile target_mic;         // training microphone (B)
  std::uint64_t split_seed = 7;
  dsp::StftConfig stft;
  dsp::PatchSize patch{64, 64};
  int stride = 32;
  cyclegan::TrainConfig train;
  const KeywordModel* model = nullptr;
  std::vector<LabeledClip> test;  // rendered by source_mic
  SweepEpochCallback on_epoch;
};

struct SweepPoint {
  double minutes = 0.0;
  double accuracy = 0.0;
  std::size_t clips_per_domain = 0;
};

// Called with every trained model, in budget order.
using SweepModelCallback = std::function<void(double minutes, const cyclegan::TrainResult&)>;

// Trains one translation model per budget (minutes of audio per microphone)
// on the leading clips of each unpaired share, and evaluates the Mic2Mic
// pipeline. A zero budget evaluates Unmodified. ConfigError unless budgets are
// non-negative and strictly increasing; InsufficientDataError when a budget
// exceeds a share.
std::vector<SweepPoint> data_amount_sweep(const std::vector<double>& minutes, const SweepSetup& setup,
                                          const SweepModelCallback& on_model = {});

std::string sweep_csv(const std::vector<SweepPoint>& curve);

}  // namespace m2m::eval
