#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace m2m::dsp {

inline constexpr int kSampleRate = 16000;

// Mono PCM samples in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }

  // Throws DataError when samples are empty, non-finite or outside [-1, 1].
  void validate() const;
};

// RIFF/WAVE PCM (8/16/24/32-bit integer). Multichannel input is averaged to
// mono; 16-bit samples are scaled by 1/32768.
AudioClip parse_wav(const std::vector<std::uint8_t>& bytes);
AudioClip read_wav(const std::filesystem::path& path);

// Writes 16-bit mono PCM.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

}  // namespace m2m::dsp
