#include "m2m/eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "m2m/config_io.hpp"
#include "m2m/error.hpp"

namespace m2m::eval {

double psnr(const dsp::Grid& a, const dsp::Grid& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError("psnr: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                     std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  if (a.values.empty()) throw ShapeError("psnr of empty grids");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - b.values[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.values.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(kPsnrRange * kPsnrRange / mse));
}

double psnr(const dsp::Spectrogram& a, const dsp::Spectrogram& b) { return psnr(a.bins, b.bins); }

std::string to_string(Pipeline p) {
  switch (p) {
    case Pipeline::Unmodified: return "unmodified";
    case Pipeline::Calibrated: return "calibrated";
    case Pipeline::Mic2Mic: return "mic2mic";
    case Pipeline::PairedGan: return "paired-gan";
  }
  return "?";
}

Pipeline parse_pipeline(const std::string& name) {
  for (Pipeline p : {Pipeline::Unmodified, Pipeline::Calibrated, Pipeline::Mic2Mic, Pipeline::PairedGan}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown pipeline '" + name + "' (unmodified, calibrated, mic2mic, paired-gan)");
}

void require_artifacts(Pipeline p, const PipelineArtifacts& artifacts) {
  if ((p == Pipeline::Mic2Mic || p == Pipeline::PairedGan) && !artifacts.translator) {
    throw ConfigError("pipeline " + to_string(p) + " needs a translation model");
  }
  if (p == Pipeline::Calibrated && !artifacts.offset) throw ConfigError("calibrated pipeline needs an offset");
}

namespace {

void check_translator_contract(const cyclegan::Translator& t, const dsp::StftConfig& cfg) {
  if (t.meta.stft.hash() != cfg.hash()) {
    throw ContractError("translation model expects features '" + t.meta.stft.contract() + "', pipeline uses '" +
                        cfg.contract() + "'");
  }
}

}  // namespace

dsp::Spectrogram pipeline_spectrogram(const dsp::AudioClip& clip, Pipeline p, const PipelineArtifacts& artifacts,
                                      const dsp::StftConfig& cfg) {
  require_artifacts(p, artifacts);
  switch (p) {
    case Pipeline::Unmodified: return dsp::stft_log_spectrogram(clip, cfg);
    case Pipeline::Calibrated: return calibrate::apply_offset(dsp::magnitude_stft(clip, cfg), *artifacts.offset, cfg);
    case Pipeline::Mic2Mic:
    case Pipeline::PairedGan:
      check_translator_contract(*artifacts.translator, cfg);
      return (*artifacts.translator)(dsp::stft_log_spectrogram(clip, cfg));
  }
  throw ConfigError("unknown pipeline");
}

dsp::Grid pipeline_features(const dsp::AudioClip& clip, Pipeline p, const PipelineArtifacts& artifacts,
                            const dsp::StftConfig& cfg) {
  require_artifacts(p, artifacts);
  switch (p) {
    case Pipeline::Unmodified: return dsp::mfcc(clip, cfg);
    case Pipeline::Calibrated:
      return dsp::mfcc_from_magnitude(calibrate::apply_offset_linear(dsp::magnitude_stft(clip, cfg), *artifacts.offset),
                                      cfg);
    case Pipeline::Mic2Mic:
    case Pipeline::PairedGan:
      return dsp::mfcc_from_magnitude(dsp::denormalize(pipeline_spectrogram(clip, p, artifacts, cfg)), cfg);
  }
  throw ConfigError("unknown pipeline");
}

json report_to_json(const EvalReport& r) {
  json j = {{"train_domain", r.train_domain},
            {"test_domain", r.test_domain},
            {"pipeline", to_string(r.pipeline)},
            {"accuracy", r.accuracy},
            {"clips", r.clips}};
  j["psnr_mean"] = r.psnr_mean ? json(*r.psnr_mean) : json(nullptr);
  j["recovery"] = r.recovery ? json(*r.recovery) : json(nullptr);
  j["recovery_clamped"] = r.recovery_clamped ? json(*r.recovery_clamped) : json(nullptr);
  return j;
}

std::string report_csv_header() { return "train_domain,test_domain,pipeline,accuracy,psnr_mean,recovery,recovery_clamped,clips"; }

std::string report_csv_row(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream os;
    os.precision(6);
    os << *v;
    return os.str();
  };
  std::ostringstream os;
  os.precision(6);
  os << r.train_domain << ',' << r.test_domain << ',' << to_string(r.pipeline) << ',' << r.accuracy << ','
     << opt(r.psnr_mean) << ',' << opt(r.recovery) << ',' << opt(r.recovery_clamped) << ',' << r.clips;
  return os.str();
}

EvalReport evaluate(const KeywordModel& model, const std::vector<LabeledClip>& test, Pipeline pipeline,
                    const PipelineArtifacts& artifacts, const std::string& train_domain,
                    const std::string& test_domain, const std::vector<LabeledClip>* aligned) {
  require_artifacts(pipeline, artifacts);
  if (test.empty()) throw InsufficientDataError("no test clips");
  std::map<std::string, const LabeledClip*> reference;
  if (aligned) {
    for (const auto& c : *aligned) reference[c.id] = &c;
  }
  std::vector<dsp::Grid> feats;
  feats.reserve(test.size());
  double psnr_sum = 0.0;
  for (const auto& c : test) {
    if (aligned) {
      const auto it = reference.find(c.id);
      if (it == reference.end()) throw DataError("no aligned reference for clip " + c.id);
      const dsp::Spectrogram spec = pipeline_spectrogram(c.clip, pipeline, artifacts, model.stft);
      psnr_sum += psnr(spec, dsp::stft_log_spectrogram(it->second->clip, model.stft));
      feats.push_back(pipeline == Pipeline::Unmodified || pipeline == Pipeline::Calibrated
                          ? pipeline_features(c.clip, pipeline, artifacts, model.stft)
                          : dsp::mfcc_from_magnitude(dsp::denormalize(spec), model.stft));
    } else {
      feats.push_back(pipeline_features(c.clip, pipeline, artifacts, model.stft));
    }
  }
  const std::vector<int> predicted = model.classify(feats);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += predicted[i] == test[i].label;

  EvalReport r;
  r.train_domain = train_domain;
  r.test_domain = test_domain;
  r.pipeline = pipeline;
  r.clips = test.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  if (aligned) r.psnr_mean = psnr_sum / static_cast<double>(test.size());
  return r;
}

Recovery recovery(double upper, double unmodified, double treated) {
  if (!(upper > unmodified)) {
    throw UndefinedRecoveryError("recovery needs upper > unmodified (got " + std::to_string(upper) + " and " +
                                 std::to_string(unmodified) + ")");
  }
  const double raw = (treated - unmodified) / (upper - unmodified);
  return {raw, std::clamp(raw, 0.0, 1.0)};
}

void attach_recovery(EvalReport& treated, const EvalReport& upper, const EvalReport& unmodified) {
  try {
    const Recovery r = recovery(upper.accuracy, unmodified.accuracy, treated.accuracy);
    treated.recovery = r.raw;
    treated.recovery_clamped = r.clamped;
  } catch (const UndefinedRecoveryError&) {
    treated.recovery.reset();
    treated.recovery_clamped.reset();
  }
}

namespace {

micsim::DomainDataset leading(const micsim::DomainDataset& d, double minutes) {
  micsim::DomainDataset out = d;
  out.clips.clear();
  out.clip_ids.clear();
  const double need = minutes * 60.0;
  double have = 0.0;
  for (std::size_t i = 0; i < d.clips.size() && have < need - 1e-9; ++i) {
    out.clips.push_back(d.clips[i]);
    out.clip_ids.push_back(d.clip_ids[i]);
    have += d.clips[i].duration_s();
  }
  if (have < need - 1e-9) {
    throw InsufficientDataError("budget of " + std::to_string(minutes) + " min exceeds the " +
                                std::to_string(have / 60.0) + " min available for " + d.domain_id);
  }
  return out;
}

}  // namespace

std::vector<SweepPoint> data_amount_sweep(const std::vector<double>& minutes, const SweepSetup& setup,
                                          const SweepModelCallback& on_model) {
  if (minutes.empty()) throw ConfigError("no budgets to sweep");
  for (std::size_t i = 0; i < minutes.size(); ++i) {
    if (!(minutes[i] >= 0)) throw ConfigError("budgets must be non-negative");
    if (i > 0 && !(minutes[i] > minutes[i - 1])) throw ConfigError("budgets must be strictly increasing");
  }
  if (!setup.model) throw ConfigError("sweep needs a keyword model");
  setup.train.validate();

  const auto domains =
      micsim::generate_domains(setup.pool, {setup.source_mic, setup.target_mic}, true, setup.split_seed, setup.stft);
  // Budget checks before any training.
  for (double m : minutes) {
    leading(domains[0], m);
    leading(domains[1], m);
  }

  cyclegan::ModelMeta meta{setup.source_mic.name, setup.target_mic.name, setup.stft, setup.patch, setup.train.width};
  std::vector<SweepPoint> curve;
  for (double m : minutes) {
    SweepPoint point;
    point.minutes = m;
    if (m == 0.0) {
      point.accuracy = evaluate(*setup.model, setup.test, Pipeline::Unmodified, {}, setup.target_mic.name,
                                setup.source_mic.name)
                           .accuracy;
      curve.push_back(point);
      continue;
    }
    const auto a = leading(domains[0], m);
    const auto b = leading(domains[1], m);
    point.clips_per_domain = a.clips.size();
    const auto bank_a = cyclegan::make_patch_bank(a, setup.stft, setup.patch, setup.stride);
    const auto bank_b = cyclegan::make_patch_bank(b, setup.stft, setup.patch, setup.stride);
    cyclegan::EpochCallback hook;
    if (setup.on_epoch) {
      hook = [&](const cyclegan::EpochLog& e, const cyclegan::CycleGanModel& model) {
        return setup.on_epoch(m, e, model);
      };
    }
    const cyclegan::TrainResult result = cyclegan::train(bank_a, bank_b, setup.train, meta, hook);
    if (on_model) on_model(m, result);
    cyclegan::Translator translator{result.model.g_ab, result.model.meta};
    PipelineArtifacts artifacts;
    artifacts.translator = &translator;
    point.accuracy = evaluate(*setup.model, setup.test, Pipeline::Mic2Mic, artifacts, setup.target_mic.name,
                              setup.source_mic.name)
                         .accuracy;
    curve.push_back(point);
  }
  return curve;
}

std::string sweep_csv(const std::vector<SweepPoint>& curve) {
  std::ostringstream os;
  os << "minutes,accuracy\n";
  for (const auto& p : curve) os << p.minutes << ',' << p.accuracy << '\n';
  return os.str();
}

}  // namespace m2m::eval
