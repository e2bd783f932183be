#include "m2m/calibrate.hpp"

#include <cmath>
#include <fstream>

#include "m2m/config_io.hpp"
#include "m2m/error.hpp"

namespace m2m::calibrate {

PsdEstimate measure_psd(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  if (dsp::frame_count(clip.size(), cfg) < kMinPsdFrames) {
    throw InputTooShortError("PSD needs at least " + std::to_string(kMinPsdFrames) + " frames");
  }
  const dsp::Grid m = dsp::magnitude_stft(clip, cfg);
  PsdEstimate psd;
  psd.bin_hz = cfg.bin_hz();
  psd.power.assign(static_cast<std::size_t>(m.rows), 0.0);
  for (int k = 0; k < m.rows; ++k) {
    double acc = 0.0;
    for (int t = 0; t < m.cols; ++t) acc += static_cast<double>(m.at(k, t)) * m.at(k, t);
    psd.power[k] = acc / m.cols;
  }
  return psd;
}

CalibrationOffset compute_offset(const PsdEstimate& r_test, const PsdEstimate& r_train) {
  if (r_test.power.size() != r_train.power.size() || r_test.power.empty()) {
    throw ConfigError("PSD estimates have different bin counts");
  }
  CalibrationOffset off;
  off.bin_hz = r_train.bin_hz;
  off.gamma.resize(r_test.power.size());
  off.floored.resize(r_test.power.size());
  for (std::size_t k = 0; k < off.gamma.size(); ++k) {
    if (r_test.power[k] < kPsdFloor || r_train.power[k] < kPsdFloor) {
      off.gamma[k] = 1.0;
      off.floored[k] = true;
      off.floor_applied = true;
    } else {
      off.gamma[k] = std::sqrt(r_train.power[k] / r_test.power[k]);
    }
  }
  return off;
}

dsp::Grid apply_offset_linear(const dsp::Grid& magnitude, const CalibrationOffset& offset) {
  if (static_cast<std::size_t>(magnitude.rows) != offset.gamma.size()) {
    throw ShapeError("offset has " + std::to_string(offset.gamma.size()) + " bins, spectrogram has " +
                     std::to_string(magnitude.rows));
  }
  dsp::Grid out = magnitude;
  for (int k = 0; k < out.rows; ++k) {
    const double g = offset.gamma[k];
    for (int t = 0; t < out.cols; ++t) out.at(k, t) = static_cast<float>(out.at(k, t) * g);
  }
  return out;
}

dsp::Spectrogram apply_offset(const dsp::Grid& magnitude, const CalibrationOffset& offset, const StftConfig& cfg) {
  return dsp::log_normalize(apply_offset_linear(magnitude, offset), cfg);
}

CalibrationOffset sweep_offset(const micsim::MicProfile& test_mic, const micsim::MicProfile& train_mic,
                               const StftConfig& cfg, double sweep_seconds) {
  const AudioClip sweep = micsim::frequency_sweep(sweep_seconds, 20.0, 0.499 * cfg.sample_rate_hz, cfg.sample_rate_hz);
  const auto stream = micsim::clip_noise_stream("calibration-sweep");
  return compute_offset(measure_psd(micsim::apply_microphone(sweep, test_mic, stream, cfg), cfg),
                        measure_psd(micsim::apply_microphone(sweep, train_mic, stream, cfg), cfg));
}

void save_offset(const CalibrationOffset& offset, const std::filesystem::path& path) {
  json floored = json::array();
  for (bool f : offset.floored) floored.push_back(f);
  write_json_file({{"bin_hz", offset.bin_hz},
                   {"gamma", offset.gamma},
                   {"floored", floored},
                   {"floor_applied", offset.floor_applied}},
                  path);
}

CalibrationOffset load_offset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open calibration offset " + path.string());
  CalibrationOffset off;
  try {
    const json j = json::parse(in);
    off.bin_hz = j.at("bin_hz").get<double>();
    off.gamma = j.at("gamma").get<std::vector<double>>();
    off.floored = j.at("floored").get<std::vector<bool>>();
    off.floor_applied = j.at("floor_applied").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError("bad calibration offset file " + path.string() + ": " + e.what());
  }
  if (off.floored.size() != off.gamma.size()) throw FormatError("calibration offset arrays differ in length");
  for (double g : off.gamma) {
    if (!std::isfinite(g) || g <= 0) throw FormatError("calibration offset holds a non-positive gamma");
  }
  return off;
}

}  // namespace m2m::calibrate
