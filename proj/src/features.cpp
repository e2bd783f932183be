#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include "m2m/dsp/features.hpp"
#include "m2m/error.hpp"

namespace m2m::dsp {

int StftConfig::window_length() const { return static_cast<int>(std::lround(window_ms * sample_rate_hz / 1000.0)); }
int StftConfig::hop_length() const { return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0)); }

void StftConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("sample rate must be positive");
  if (window_ms <= 0 || hop_ms <= 0) throw ConfigError("window and hop must be positive");
  if (hop_ms > window_ms) throw ConfigError("hop_ms must not exceed window_ms");
  if (fft_size < 2 || !std::has_single_bit(static_cast<unsigned>(fft_size))) {
    throw ConfigError("fft_size must be a power of two");
  }
  if (fft_size < window_length()) throw ConfigError("fft_size must be at least the window length");
  if (hop_length() < 1) throw ConfigError("hop is shorter than one sample");
}

std::string StftConfig::contract() const {
  std::ostringstream os;
  os << "sr=" << sample_rate_hz << ";win=" << window_length() << ";hop=" << hop_length() << ";fft=" << fft_size
     << ";window=hamming;log=log10+" << kLogFloor << ";mel=" << kMelFilters << ";mfcc=" << kMfccCoefficients;
  return os.str();
}

std::uint64_t StftConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : contract()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int frame_count(std::size_t length, const StftConfig& cfg) {
  const std::size_t win = static_cast<std::size_t>(cfg.window_length());
  if (length < win) return 0;
  return static_cast<int>((length - win) / static_cast<std::size_t>(cfg.hop_length())) + 1;
}

std::vector<double> hamming_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (length == 1) return w;
  for (int n = 0; n < length; ++n) w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1));
  return w;
}

namespace {

struct PlanPair {
  fftw_plan r2c;
  fftw_plan c2r;
};

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

PlanPair plans_for(int n) {
  std::lock_guard<std::mutex> lock(planner_mutex());
  static std::map<int, PlanPair> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  double* real = fftw_alloc_real(static_cast<std::size_t>(n));
  fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair p{fftw_plan_dft_r2c_1d(n, real, spec, flags), fftw_plan_dft_c2r_1d(n, spec, real, flags)};
  fftw_free(real);
  fftw_free(spec);
  if (!p.r2c || !p.c2r) throw ConfigError("FFT planning failed for size " + std::to_string(n));
  cache.emplace(n, p);
  return p;
}

}  // namespace

Fft::Fft(int n) : n_(n) {
  if (n < 2) throw ConfigError("FFT size must be at least 2");
  const PlanPair p = plans_for(n);
  r2c_ = p.r2c;
  c2r_ = p.c2r;
}

void Fft::forward(const double* in, std::complex<double>* out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(r2c_), const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
}

void Fft::inverse(const std::complex<double>* in, double* out) const {
  // c2r overwrites its input.
  std::vector<std::complex<double>> scratch(in, in + n_ / 2 + 1);
  fftw_execute_dft_c2r(static_cast<fftw_plan>(c2r_), reinterpret_cast<fftw_complex*>(scratch.data()), out);
}

Grid magnitude_stft(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  const int frames = frame_count(clip.samples.size(), cfg);
  if (frames == 0) {
    throw InputTooShortError("clip of " + std::to_string(clip.samples.size()) + " samples is shorter than one window");
  }
  const int win = cfg.window_length();
  const int hop = cfg.hop_length();
  const int bins = cfg.freq_bins();
  const auto window = hamming_window(win);
  Fft fft(cfg.fft_size);
  std::vector<double> frame(static_cast<std::size_t>(cfg.fft_size), 0.0);
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(bins + 1));
  Grid out(bins, frames);
  for (int t = 0; t < frames; ++t) {
    const float* src = clip.samples.data() + static_cast<std::size_t>(t) * hop;
    for (int n = 0; n < win; ++n) frame[n] = src[n] * window[n];
    fft.forward(frame.data(), spec.data());
    for (int k = 0; k < bins; ++k) out.at(k, t) = static_cast<float>(std::abs(spec[k]));
  }
  return out;
}

Spectrogram log_normalize(const Grid& magnitude, const StftConfig& cfg) {
  Spectrogram s;
  s.config = cfg;
  s.bins = Grid(magnitude.rows, magnitude.cols);
  std::vector<double> logs(magnitude.values.size());
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    logs[i] = std::log10(std::max(0.0, static_cast<double>(magnitude.values[i])) + kLogFloor);
    lo = std::min(lo, logs[i]);
    hi = std::max(hi, logs[i]);
  }
  s.log_min = lo;
  s.log_max = hi;
  if (!(hi > lo)) {
    std::fill(s.bins.values.begin(), s.bins.values.end(), -1.0f);
    return s;
  }
  const double scale = 2.0 / (hi - lo);
  for (std::size_t i = 0; i < logs.size(); ++i) {
    s.bins.values[i] = static_cast<float>(std::clamp((logs[i] - lo) * scale - 1.0, -1.0, 1.0));
  }
  return s;
}

Grid denormalize(const Spectrogram& spec) {
  Grid out(spec.bins.rows, spec.bins.cols);
  const double half_range = 0.5 * (spec.log_max - spec.log_min);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double lg = spec.log_min + (static_cast<double>(spec.bins.values[i]) + 1.0) * half_range;
    out.values[i] = static_cast<float>(std::max(0.0, std::pow(10.0, lg) - kLogFloor));
  }
  return out;
}

Spectrogram stft_log_spectrogram(const AudioClip& clip, const StftConfig& cfg) {
  return log_normalize(magnitude_stft(clip, cfg), cfg);
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

Grid mel_filterbank(const StftConfig& cfg, int filters) {
  const int bins = cfg.freq_bins();
  const double nyquist = cfg.sample_rate_hz / 2.0;
  std::vector<double> edges(static_cast<std::size_t>(filters + 2));
  const double top = hz_to_mel(nyquist);
  for (int i = 0; i < filters + 2; ++i) edges[i] = mel_to_hz(top * i / (filters + 1));
  Grid fb(filters, bins);
  for (int m = 0; m < filters; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * cfg.bin_hz();
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb.at(m, k) = static_cast<float>(w);
    }
  }
  return fb;
}

Grid mfcc_from_magnitude(const Grid& magnitude, const StftConfig& cfg) {
  if (magnitude.rows != cfg.freq_bins()) throw ShapeError("magnitude grid does not match config bin count");
  const Grid fb = mel_filterbank(cfg);
  const int frames = magnitude.cols;
  // Orthonormal DCT-II basis.
  std::vector<double> dct(static_cast<std::size_t>(kMfccCoefficients) * kMelFilters);
  for (int c = 0; c < kMfccCoefficients; ++c) {
    const double norm = std::sqrt((c == 0 ? 1.0 : 2.0) / kMelFilters);
    for (int m = 0; m < kMelFilters; ++m) {
      dct[c * kMelFilters + m] = norm * std::cos(std::numbers::pi * c * (2 * m + 1) / (2.0 * kMelFilters));
    }
  }
  Grid out(frames, kMfccCoefficients);
  std::vector<double> logmel(kMelFilters);
  for (int t = 0; t < frames; ++t) {
    for (int m = 0; m < kMelFilters; ++m) {
      double e = 0.0;
      for (int k = 0; k < magnitude.rows; ++k) {
        const double w = fb.at(m, k);
        if (w == 0.0) continue;
        const double mag = magnitude.at(k, t);
        e += w * mag * mag;
      }
      logmel[m] = std::log(std::max(e, kMelEnergyFloor));
    }
    for (int c = 0; c < kMfccCoefficients; ++c) {
      double acc = 0.0;
      for (int m = 0; m < kMelFilters; ++m) acc += dct[c * kMelFilters + m] * logmel[m];
      out.at(t, c) = static_cast<float>(acc);
    }
  }
  return out;
}

Grid mfcc(const AudioClip& clip, const StftConfig& cfg) { return mfcc_from_magnitude(magnitude_stft(clip, cfg), cfg); }

namespace {
constexpr char kSpecMagic[8] = {'M', '2', 'M', 'S', 'P', 'E', 'C', '1'};
}

std::vector<std::uint8_t> encode_spectrogram(const Grid& bins) {
  std::vector<std::uint8_t> out(kSpecMagic, kSpecMagic + 8);
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(static_cast<std::uint32_t>(bins.rows));
  put(static_cast<std::uint32_t>(bins.cols));
  for (float v : bins.values) put(std::bit_cast<std::uint32_t>(v));
  return out;
}

Grid decode_spectrogram(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kSpecMagic, 8) != 0) throw FormatError("not a spectrogram file");
  auto get = [&](std::size_t pos) {
    return bytes[pos] | (bytes[pos + 1] << 8) | (bytes[pos + 2] << 16) |
           (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
  };
  const std::uint32_t rows = get(8), cols = get(12);
  if (rows == 0 || cols == 0) throw FormatError("spectrogram has an empty dimension");
  if (bytes.size() != 16 + 4ull * rows * cols) throw FormatError("spectrogram size does not match header");
  Grid g(static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = std::bit_cast<float>(get(16 + 4 * i));
  return g;
}

void write_spectrogram(const Grid& bins, const std::filesystem::path& path) {
  const auto bytes = encode_spectrogram(bins);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Grid read_spectrogram(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_spectrogram(bytes);
}

}  // namespace m2m::dsp
