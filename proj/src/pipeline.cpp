#include "m2m/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "m2m/error.hpp"

namespace m2m::pipeline {

ModelMetadata metadata_of(const eval::KeywordModel& model) {
  ModelMetadata meta;
  meta.training_mics.insert(model.training_mics.begin(), model.training_mics.end());
  meta.task = model.task;
  meta.feature_hash = model.stft.hash();
  return meta;
}

Decision training_manager_decide(const ModelMetadata& meta, const std::string& deployment_mic) {
  if (meta.training_mics.empty()) throw ConfigError("model metadata lists no training microphones");
  if (meta.training_mics.count(deployment_mic)) return {Decision::Kind::NoTranslationNeeded, ""};
  return {Decision::Kind::TrainTranslation, *meta.training_mics.begin()};
}

double PipelineResult::stage_ms(const std::string& stage) const {
  for (const auto& t : timings) {
    if (t.stage == stage) return t.ms;
  }
  throw ConfigError("no pipeline stage '" + stage + "'");
}

json result_to_json(const PipelineResult& r) {
  json segments = json::array();
  for (const auto& s : r.segments) segments.push_back({s.start, s.end});
  json timings = json::object();
  for (const auto& t : r.timings) timings[t.stage] = t.ms;
  json j = {{"label", r.label},  {"class_index", r.class_index}, {"segments", segments},
            {"timings_ms", timings}, {"total_ms", r.total_ms}};
  j["probabilities"] = r.probabilities;
  return j;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError("pipeline needs a " + what + " path");
  if (!std::filesystem::exists(p)) throw ConfigError(what + " not found: " + p.string());
}

dsp::AudioClip centred_window(const dsp::AudioClip& clip, const dsp::Segment& seg) {
  const std::size_t n = static_cast<std::size_t>(clip.sample_rate_hz);
  dsp::AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.samples.assign(n, 0.0f);
  const std::size_t centre = (seg.start + seg.end) / 2;
  std::size_t start = centre > n / 2 ? centre - n / 2 : 0;
  if (clip.size() >= n) {
    start = std::min(start, clip.size() - n);
  } else {
    start = 0;
  }
  const std::size_t count = std::min(n, clip.size() - start);
  std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(start), count, out.samples.begin());
  return out;
}

}  // namespace

DeploymentPipeline::DeploymentPipeline(const PipelineConfig& cfg) : pipeline_(cfg.pipeline), vad_(cfg.vad) {
  require_file(cfg.keyword_model, "keyword model");
  model_ = eval::load_keyword(cfg.keyword_model);
  if (pipeline_ == eval::Pipeline::Mic2Mic || pipeline_ == eval::Pipeline::PairedGan) {
    require_file(cfg.translator, "translation model");
    translator_ = cyclegan::load_translator(cfg.translator);
    if (!cfg.deployment_mic.empty() && translator_->meta.source_domain != cfg.deployment_mic) {
      throw ContractError("translation model maps from '" + translator_->meta.source_domain +
                          "', deployment microphone is '" + cfg.deployment_mic + "'");
    }
  }
  if (pipeline_ == eval::Pipeline::Calibrated) {
    require_file(cfg.offset, "calibration offset");
    offset_ = calibrate::load_offset(cfg.offset);
  }
  check_contracts();
}

DeploymentPipeline::DeploymentPipeline(eval::KeywordModel model, eval::Pipeline pipeline,
                                       std::optional<cyclegan::Translator> translator,
                                       std::optional<calibrate::CalibrationOffset> offset, VadSettings vad)
    : model_(std::move(model)),
      pipeline_(pipeline),
      translator_(std::move(translator)),
      offset_(std::move(offset)),
      vad_(vad) {
  check_contracts();
}

void DeploymentPipeline::check_contracts() const {
  eval::PipelineArtifacts artifacts;
  artifacts.translator = translator_ ? &*translator_ : nullptr;
  artifacts.offset = offset_ ? &*offset_ : nullptr;
  eval::require_artifacts(pipeline_, artifacts);
  const dsp::StftConfig& stft = model_.stft;
  if (translator_ && (pipeline_ == eval::Pipeline::Mic2Mic || pipeline_ == eval::Pipeline::PairedGan)) {
    if (translator_->meta.stft.hash() != stft.hash()) {
      throw ContractError("translation model expects features '" + translator_->meta.stft.contract() +
                          "', keyword model uses '" + stft.contract() + "'");
    }
    const auto& mics = model_.training_mics;
    if (std::find(mics.begin(), mics.end(), translator_->meta.target_domain) == mics.end()) {
      throw ContractError("translation model targets '" + translator_->meta.target_domain +
                          "', which the keyword model was not trained on");
    }
  }
  if (offset_ && pipeline_ == eval::Pipeline::Calibrated) {
    if (static_cast<int>(offset_->gamma.size()) != stft.freq_bins() ||
        std::abs(offset_->bin_hz - stft.bin_hz()) > 1e-9) {
      throw ContractError("calibration offset has " + std::to_string(offset_->gamma.size()) + " bins of " +
                          std::to_string(offset_->bin_hz) + " Hz, keyword model uses '" + stft.contract() + "'");
    }
  }
}

PipelineResult DeploymentPipeline::run(const dsp::AudioClip& clip) const {
  clip.validate();
  if (clip.sample_rate_hz != model_.stft.sample_rate_hz) {
    throw UnsupportedError("clip is " + std::to_string(clip.sample_rate_hz) + " Hz, model expects " +
                           std::to_string(model_.stft.sample_rate_hz) + " Hz");
  }
  PipelineResult r;
  const auto t_start = Clock::now();
  auto t0 = Clock::now();
  r.segments = dsp::vad_segments(clip, vad_.frame_ms, vad_.threshold_db);
  r.timings.push_back({"vad", ms_since(t0)});
  if (r.segments.empty()) {
    r.label = "no-speech";
    for (const char* stage : {"features", "translate", "classify"}) r.timings.push_back({stage, 0.0});
    r.total_ms = ms_since(t_start);
    return r;
  }
  const auto longest = std::max_element(r.segments.begin(), r.segments.end(), [](const auto& a, const auto& b) {
    return a.end - a.start < b.end - b.start;
  });

  t0 = Clock::now();
  const dsp::AudioClip window = centred_window(clip, *longest);
  dsp::Grid magnitude = dsp::magnitude_stft(window, model_.stft);
  r.timings.push_back({"features", ms_since(t0)});

  t0 = Clock::now();
  switch (pipeline_) {
    case eval::Pipeline::Unmodified: break;
    case eval::Pipeline::Calibrated: magnitude = calibrate::apply_offset_linear(magnitude, *offset_); break;
    case eval::Pipeline::Mic2Mic:
    case eval::Pipeline::PairedGan:
      magnitude = dsp::denormalize((*translator_)(dsp::log_normalize(magnitude, model_.stft)));
      break;
  }
  r.timings.push_back({"translate", ms_since(t0)});

  t0 = Clock::now();
  r.probabilities = model_.probabilities({dsp::mfcc_from_magnitude(magnitude, model_.stft)}).front();
  r.class_index = static_cast<int>(std::max_element(r.probabilities.begin(), r.probabilities.end()) -
                                   r.probabilities.begin());
  r.label = model_.classes[static_cast<std::size_t>(r.class_index)];
  r.timings.push_back({"classify", ms_since(t0)});
  r.total_ms = ms_since(t_start);
  return r;
}

PipelineResult run_pipeline(const dsp::AudioClip& clip, const PipelineConfig& cfg) {
  return DeploymentPipeline(cfg).run(clip);
}

LatencyStats bench_translation(const cyclegan::Translator& translator, const dsp::AudioClip& clip, int repeat) {
  if (repeat < 1) throw ConfigError("repeat must be at least 1");
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(repeat));
  for (int i = 0; i < repeat; ++i) {
    const auto t0 = Clock::now();
    const dsp::Spectrogram out = translator(dsp::stft_log_spectrogram(clip, translator.meta.stft));
    ms.push_back(ms_since(t0));
    if (out.bins.values.empty()) throw NumericError("empty translation");
  }
  std::sort(ms.begin(), ms.end());
  auto rank = [&](double q) {
    const std::size_t idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(ms.size()))) - 1;
    return ms[std::min(idx, ms.size() - 1)];
  };
  LatencyStats s;
  s.repeats = repeat;
  s.min_ms = ms.front();
  s.median_ms = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  s.p95_ms = rank(0.95);
  return s;
}

}  // namespace m2m::pipeline
