#pragma once

#include <cstddef>
#include <vector>

#include "m2m/dsp/audio.hpp"
#include "m2m/dsp/features.hpp"

namespace m2m::dsp {

struct Segment {
  std::size_t start = 0;  // samples, half-open
  std::size_t end = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Frames whose RMS level exceeds (95th-percentile frame level + threshold_db)
// are voiced; runs separated by fewer than two unvoiced frames are merged.
// Frames below -100 dBFS never count as voiced, so silence yields no segments.
std::vector<Segment> vad_segments(const AudioClip& clip, double frame_ms, double threshold_db);

std::size_t voiced_samples(const std::vector<Segment>& segments);

// Full-band default; 64x64 (frequency-cropped) is the desk-scale setting.
struct PatchSize {
  int freq = 256;
  int time = 64;
};

// Window start frames: stride-spaced full windows, plus one trailing window
// (reflect-padded) when the last full window stops short of the end.
std::vector<int> patch_starts(int frames, int time, int stride);

// Crops to the lowest `size.freq` bins and tiles time. Each patch keeps the
// source range and config. Throws InputTooShortError when padding would need
// more frames than the spectrogram has.
std::vector<Spectrogram> extract_patches(const Spectrogram& spec, PatchSize size, int stride);

// Inverse of extract_patches for a spectrogram of `frames` frames: padded
// columns are dropped and overlapping columns averaged.
Grid reassemble_patches(const std::vector<Grid>& patches, int frames, int stride);

}  // namespace m2m::dsp
