#pragma once

#include <filesystem>
#include <vector>

#include "m2m/dsp/features.hpp"
#include "m2m/micsim.hpp"

namespace m2m::calibrate {

using dsp::AudioClip;
using dsp::StftConfig;

inline constexpr double kPsdFloor = 1e-10;
inline constexpr int kMinPsdFrames = 8;

struct PsdEstimate {
  std::vector<double> power;  // mean |STFT|^2 per bin
  double bin_hz = 0.0;
};

// Multiplier mapping test-microphone magnitudes toward the training microphone.
struct CalibrationOffset {
  std::vector<double> gamma;
  std::vector<bool> floored;  // per bin: either PSD was under kPsdFloor
  bool floor_applied = false;
  double bin_hz = 0.0;
};

// Mean over frames of the squared Hamming-windowed STFT magnitude.
// InputTooShortError below kMinPsdFrames frames.
PsdEstimate measure_psd(const AudioClip& clip, const StftConfig& cfg);

// gamma = sqrt(r_train / r_test); bins where either PSD is below kPsdFloor get 1.
CalibrationOffset compute_offset(const PsdEstimate& r_test, const PsdEstimate& r_train);

// Per-bin multiply in linear magnitude. ShapeError on a bin-count mismatch.
dsp::Grid apply_offset_linear(const dsp::Grid& magnitude, const CalibrationOffset& offset);
// apply_offset_linear followed by log-normalization.
dsp::Spectrogram apply_offset(const dsp::Grid& magnitude, const CalibrationOffset& offset, const StftConfig& cfg);

// Plays one exponential sweep through both simulated microphones and derives
// the offset from the recordings.
CalibrationOffset sweep_offset(const micsim::MicProfile& test_mic, const micsim::MicProfile& train_mic,
                               const StftConfig& cfg, double sweep_seconds = 4.0);

void save_offset(const CalibrationOffset& offset, const std::filesystem::path& path);
CalibrationOffset load_offset(const std::filesystem::path& path);

}  // namespace m2m::calibrate
