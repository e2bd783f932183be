#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "m2m/dsp/segment.hpp"
#include "m2m/eval/evaluate.hpp"

namespace m2m::pipeline {

// What a deployed audio model declares about itself.
struct ModelMetadata {
  std::set<std::string> training_mics;
  std::string task;
  std::uint64_t feature_hash = 0;
};

ModelMetadata metadata_of(const eval::KeywordModel& model);

struct Decision {
  enum class Kind { NoTranslationNeeded, TrainTranslation };
  Kind kind = Kind::NoTranslationNeeded;
  std::string target_mic;  // set for TrainTranslation

  friend bool operator==(const Decision&, const Decision&) = default;
};

// No translation when the deployment microphone is one the model was trained
// on; otherwise translate toward the lexicographically smallest training
// microphone. ConfigError on an empty microphone set.
Decision training_manager_decide(const ModelMetadata& meta, const std::string& deployment_mic);

struct VadSettings {
  double frame_ms = 20.0;
  double threshold_db = -30.0;
};

struct PipelineConfig {
  std::string deployment_mic;
  eval::Pipeline pipeline = eval::Pipeline::Unmodified;
  std::filesystem::path keyword_model;
  std::filesystem::path translator;  // Mic2Mic / PairedGan
  std::filesystem::path offset;      // Calibrated
  VadSettings vad;
};

struct StageTiming {
  std::string stage;  // "vad", "features", "translate", "classify"
  double ms = 0.0;
};

struct PipelineResult {
  std::string label;  // class name, or "no-speech"
  int class_index = -1;
  std::vector<double> probabilities;
  std::vector<dsp::Segment> segments;
  std::vector<StageTiming> timings;  // same stages for every pipeline
  double total_ms = 0.0;

  double stage_ms(const std::string& stage) const;
};

json result_to_json(const PipelineResult& r);

// Loaded, contract-checked deployment: VAD gate, spectrogram, optional
// translation or calibration, MFCC, keyword model. `run` is const and safe to
// call concurrently.
class DeploymentPipeline {
 public:
  // Throws ContractError when the artifacts disagree on the feature settings,
  // the translator does not target one of the keyword model's microphones, or
  // the offset's bin count does not match.
  explicit DeploymentPipeline(const PipelineConfig& cfg);
  DeploymentPipeline(eval::KeywordModel model, eval::Pipeline pipeline,
                     std::optional<cyclegan::Translator> translator = std::nullopt,
                     std::optional<calibrate::CalibrationOffset> offset = std::nullopt, VadSettings vad = {});

  // Classifies the one-second window centred on the longest voiced segment.
  PipelineResult run(const dsp::AudioClip& clip) const;

  const eval::KeywordModel& model() const { return model_; }
  eval::Pipeline pipeline() const { return pipeline_; }

 private:
  void check_contracts() const;

  eval::KeywordModel model_;
  eval::Pipeline pipeline_;
  std::optional<cyclegan::Translator> translator_;
  std::optional<calibrate::CalibrationOffset> offset_;
  VadSettings vad_;
};

PipelineResult run_pipeline(const dsp::AudioClip& clip, const PipelineConfig& cfg);

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  int repeats = 0;
};

// Wall time of spectrogram + translation of one clip, `repeat` times.
LatencyStats bench_translation(const cyclegan::Translator& translator, const dsp::AudioClip& clip, int repeat);

}  // namespace m2m::pipeline
