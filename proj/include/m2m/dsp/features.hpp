#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m2m/dsp/audio.hpp"

namespace m2m::dsp {

enum class WindowKind { Hamming };

struct StftConfig {
  double window_ms = 32.0;
  double hop_ms = 16.0;
  int fft_size = 512;
  WindowKind window = WindowKind::Hamming;
  int sample_rate_hz = kSampleRate;

  int window_length() const;
  int hop_length() const;
  int freq_bins() const { return fft_size / 2; }  // Nyquist bin dropped
  double bin_hz() const { return static_cast<double>(sample_rate_hz) / fft_size; }

  // Throws ConfigError on hop > window, non power-of-two fft or fft < window.
  void validate() const;

  // Canonical text of every field that changes the features; `hash` is FNV-1a over it.
  std::string contract() const;
  std::uint64_t hash() const;
};

// frames = floor((len - win) / hop) + 1; zero when the clip is shorter than a window.
int frame_count(std::size_t length, const StftConfig& cfg);

std::vector<double> hamming_window(int length);

// Thin wrapper over an FFTW real-to-complex / complex-to-real plan pair.
// Plans are created once per size under a lock; execution is reentrant.
class Fft {
 public:
  explicit Fft(int n);
  int size() const { return n_; }
  // in: n reals; out: n/2 + 1 bins.
  void forward(const double* in, std::complex<double>* out) const;
  // in: n/2 + 1 bins; out: n reals, unnormalized (scaled by n).
  void inverse(const std::complex<double>* in, double* out) const;

 private:
  int n_;
  void* r2c_;
  void* c2r_;
};

// Row-major [rows x cols] grid of floats; spectrogram-like grids are freq x time.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  Grid() = default;
  Grid(int r, int c, float fill = 0.0f) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

inline constexpr double kLogFloor = 1e-6;

// Normalized log-magnitude spectrogram. `log_min`/`log_max` are the per-clip
// log10 range the bins were scaled from, kept so magnitudes can be restored.
struct Spectrogram {
  Grid bins;  // [freq_bins x frames], values in [-1, 1]
  StftConfig config;
  double log_min = 0.0;
  double log_max = 0.0;

  int freq_bins() const { return bins.rows; }
  int frames() const { return bins.cols; }
};

// |STFT| as [freq_bins x frames]. Throws InputTooShortError below one window.
Grid magnitude_stft(const AudioClip& clip, const StftConfig& cfg);

// log10(|S| + 1e-6) then per-clip min-max scaling to [-1, 1]; a constant grid maps to -1.
Spectrogram log_normalize(const Grid& magnitude, const StftConfig& cfg);

// Inverse of log_normalize using the stored range.
Grid denormalize(const Spectrogram& spec);

Spectrogram stft_log_spectrogram(const AudioClip& clip, const StftConfig& cfg);

inline constexpr int kMelFilters = 26;
inline constexpr int kMfccCoefficients = 24;
inline constexpr double kMelEnergyFloor = 1e-10;

// [frames x 24] cepstra.
Grid mfcc_from_magnitude(const Grid& magnitude, const StftConfig& cfg);
Grid mfcc(const AudioClip& clip, const StftConfig& cfg);

// [kMelFilters x freq_bins] triangular filters, 0 Hz to Nyquist, HTK mel scale.
Grid mel_filterbank(const StftConfig& cfg, int filters = kMelFilters);

// Flat binary: "M2MSPEC1", u32 freq_bins, u32 frames, f32 row-major bins.
std::vector<std::uint8_t> encode_spectrogram(const Grid& bins);
Grid decode_spectrogram(const std::vector<std::uint8_t>& bytes);
void write_spectrogram(const Grid& bins, const std::filesystem::path& path);
Grid read_spectrogram(const std::filesystem::path& path);

}  // namespace m2m::dsp
