#include <algorithm>
#include <cmath>

#include "m2m/dsp/segment.hpp"
#include "m2m/error.hpp"

namespace m2m::dsp {
namespace {

constexpr double kSilenceDb = -100.0;

}  // namespace

std::vector<Segment> vad_segments(const AudioClip& clip, double frame_ms, double threshold_db) {
  if (!(frame_ms > 0)) throw ConfigError("VAD frame_ms must be positive");
  const std::size_t len = clip.samples.size();
  const std::size_t frame = std::max<std::size_t>(1, std::lround(frame_ms * clip.sample_rate_hz / 1000.0));
  const std::size_t frames = (len + frame - 1) / frame;
  if (frames == 0) return {};

  std::vector<double> level(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t b = f * frame, e = std::min(len, b + frame);
    double acc = 0.0;
    for (std::size_t i = b; i < e; ++i) acc += static_cast<double>(clip.samples[i]) * clip.samples[i];
    const double rms = std::sqrt(acc / static_cast<double>(e - b));
    level[f] = rms > 0 ? 20.0 * std::log10(rms) : -INFINITY;
  }
  std::vector<double> sorted = level;
  std::sort(sorted.begin(), sorted.end());
  const double reference = sorted[static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(frames - 1)))];
  const double gate = std::max(reference + threshold_db, kSilenceDb);

  std::vector<Segment> frames_on;
  for (std::size_t f = 0; f < frames; ++f) {
    if (!(level[f] > gate)) continue;
    if (!frames_on.empty() && f - frames_on.back().end < 2) {
      frames_on.back().end = f + 1;  // gap of at most one frame
    } else {
      frames_on.push_back({f, f + 1});
    }
  }
  for (auto& s : frames_on) {
    s.start *= frame;
    s.end = std::min(len, s.end * frame);
  }
  return frames_on;
}

std::size_t voiced_samples(const std::vector<Segment>& segments) {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.end - s.start;
  return n;
}

std::vector<int> patch_starts(int frames, int time, int stride) {
  if (time <= 0 || stride <= 0) throw ConfigError("patch time and stride must be positive");
  std::vector<int> starts;
  int s = 0;
  for (; s + time <= frames; s += stride) starts.push_back(s);
  const int covered = starts.empty() ? 0 : starts.back() + time;
  if (covered < frames && (starts.empty() || s < frames)) starts.push_back(starts.empty() ? 0 : s);
  return starts;
}

std::vector<Spectrogram> extract_patches(const Spectrogram& spec, PatchSize size, int stride) {
  if (size.freq <= 0 || size.freq > spec.freq_bins()) {
    throw ConfigError("patch freq " + std::to_string(size.freq) + " exceeds " + std::to_string(spec.freq_bins()) +
                      " bins");
  }
  const int frames = spec.frames();
  const auto starts = patch_starts(frames, size.time, stride);
  const int pad = starts.back() + size.time - frames;
  if (pad > frames - 1) {
    throw InputTooShortError("spectrogram of " + std::to_string(frames) + " frames is too short to pad to " +
                             std::to_string(size.time));
  }
  std::vector<Spectrogram> out;
  out.reserve(starts.size());
  for (int start : starts) {
    Spectrogram p;
    p.config = spec.config;
    p.log_min = spec.log_min;
    p.log_max = spec.log_max;
    p.bins = Grid(size.freq, size.time);
    for (int t = 0; t < size.time; ++t) {
      int src = start + t;
      if (src >= frames) src = 2 * (frames - 1) - src;  // reflect about the last frame
      for (int f = 0; f < size.freq; ++f) p.bins.at(f, t) = spec.bins.at(f, src);
    }
    out.push_back(std::move(p));
  }
  return out;
}

Grid reassemble_patches(const std::vector<Grid>& patches, int frames, int stride) {
  if (patches.empty()) throw ShapeError("no patches to reassemble");
  const int rows = patches.front().rows, time = patches.front().cols;
  const auto starts = patch_starts(frames, time, stride);
  if (starts.size() != patches.size()) {
    throw ShapeError("expected " + std::to_string(starts.size()) + " patches for " + std::to_string(frames) +
                     " frames, got " + std::to_string(patches.size()));
  }
  Grid sum(rows, frames);
  std::vector<int> count(static_cast<std::size_t>(frames), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Grid& p = patches[i];
    if (p.rows != rows || p.cols != time) throw ShapeError("patches differ in shape");
    const int valid = std::min(time, frames - starts[i]);
    for (int t = 0; t < valid; ++t) {
      ++count[starts[i] + t];
      for (int f = 0; f < rows; ++f) sum.at(f, starts[i] + t) += p.at(f, t);
    }
  }
  for (int t = 0; t < frames; ++t) {
    if (count[t] <= 1) continue;
    for (int f = 0; f < rows; ++f) sum.at(f, t) /= static_cast<float>(count[t]);
  }
  return sum;
}

}  // namespace m2m::dsp
