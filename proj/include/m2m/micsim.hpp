#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "m2m/dsp/audio.hpp"
#include "m2m/dsp/features.hpp"

namespace m2m::micsim {

using dsp::AudioClip;
using dsp::StftConfig;

inline constexpr double kNoNoise = -std::numeric_limits<double>::infinity();

// |H(f)| sampled at the STFT bin centres k * bin_hz, k = 0 .. freq_bins - 1.
struct TransferFunction {
  std::vector<double> gains;
  std::string description;

  // Throws ConfigError unless all gains are finite, >= 0, and one is > 0.
  void validate() const;
};

struct MicProfile {
  std::string name;
  TransferFunction tf;
  double noise_floor_db = kNoNoise;  // RMS of added white noise, dBFS
  std::uint64_t seed = 0;

  MicProfile without_noise() const;
};

TransferFunction flat_response(const StftConfig& cfg, double gain);
// Gain 1 up to pass_hz, linear ramp to stop_gain at stop_hz, stop_gain above.
TransferFunction lowpass_ramp(const StftConfig& cfg, double pass_hz, double stop_hz, double stop_gain);
// Raised-cosine high shelf from 1 down to shelf_gain between lo_hz and hi_hz.
TransferFunction cosine_shelf(const StftConfig& cfg, double lo_hz, double hi_hz, double shelf_gain);
TransferFunction multiply(const TransferFunction& a, const TransferFunction& b);

// "ref" (identity), "arrayA" (high-frequency shelf cut), "usbC" (mid-band
// ripple, -50 dBFS noise) and "lofi" (steep cut from 500 Hz to -20 dB at 1 kHz,
// back to unity above 2 kHz; noise free).
std::vector<MicProfile> preset_profiles(const StftConfig& cfg = {});
MicProfile find_profile(const std::string& name, const StftConfig& cfg = {});

// Zero-phase FIR realising a gain curve: gains are linearly interpolated onto
// a 4x finer frequency grid, inverted to a symmetric impulse response and
// applied by FFT overlap-add.
class ZeroPhaseFilter {
 public:
  ZeroPhaseFilter(const TransferFunction& tf, const StftConfig& cfg);
  std::vector<float> apply(const std::vector<float>& x) const;
  int taps() const { return taps_; }

 private:
  int taps_;
  int block_;
  int fft_size_;
  std::vector<std::complex<double>> response_;  // spectrum of the delayed impulse, fft_size_/2 + 1 bins
};

// Filters, adds seeded white noise at the profile's floor, clips to [-1, 1].
// `noise_stream` decorrelates noise across clips rendered with one profile.
AudioClip apply_microphone(const AudioClip& clip, const MicProfile& profile, std::uint64_t noise_stream = 0,
                           const StftConfig& cfg = {});

struct SourceClip {
  std::string id;
  AudioClip clip;
};

struct DomainDataset {
  std::string domain_id;
  MicProfile profile;
  std::vector<std::string> clip_ids;
  std::vector<AudioClip> clips;
  std::set<std::string> unpaired_with;
};

// Unpaired: seeded shuffle, then the corpus is dealt into disjoint equal
// shares (remainder dropped). Paired: every domain renders every clip.
std::vector<DomainDataset> generate_domains(const std::vector<SourceClip>& corpus,
                                            const std::vector<MicProfile>& profiles, bool unpaired,
                                            std::uint64_t split_seed, const StftConfig& cfg = {});

// Throws PairingViolationError if the two datasets share a clip id.
void require_disjoint(const DomainDataset& a, const DomainDataset& b);

std::uint64_t clip_noise_stream(const std::string& clip_id);

// Directory of <clip_id>.wav files plus manifest.json.
void write_domain(const DomainDataset& domain, const std::filesystem::path& dir);
DomainDataset read_domain(const std::filesystem::path& dir, const StftConfig& cfg = {});

// Exponential sine sweep at amplitude 0.8, 16 kHz.
AudioClip frequency_sweep(double duration_s, double f_lo, double f_hi, int sample_rate_hz = dsp::kSampleRate);

}  // namespace m2m::micsim
