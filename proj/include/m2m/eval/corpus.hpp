#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m2m/dsp/audio.hpp"
#include "m2m/micsim.hpp"

namespace m2m::eval {

using dsp::AudioClip;

// 12 keywords followed by "Unknown".
const std::vector<std::string>& keyword_classes();
int unknown_class();

struct LabeledClip {
  std::string id;
  AudioClip clip;
  int label = 0;
};

// Desk-scale stand-in for a speech-command corpus. Every "word" is a voiced
// chord (fundamental 120-250 Hz plus two formant tones below 2 kHz) over white
// breath noise. Keywords differ in formant placement and in the second
// formant's level (strong 0.1 or weak 0.01 peak). Unknown words use formant
// placements no keyword uses.
struct SynthConfig {
  double f0_lo_hz = 120.0, f0_hi_hz = 250.0;
  double f0_amp = 0.1;
  double f1_amp = 0.1;
  double f2_strong = 0.1, f2_weak = 0.01;
  double formant_jitter = 0.03;  // relative
  double level_db_range = 3.0;   // per-word level spread
  double noise_dbfs = -32.0;
};

// `per_class` 1-second clips for every class (Unknown included), shuffled.
std::vector<LabeledClip> synth_keyword_clips(int per_class, std::uint64_t seed, const std::string& id_prefix = "kw",
                                             const SynthConfig& cfg = {});

// Unlabeled multi-word clips from the same voice model, with formants drawn
// continuously over the whole range: the pool translation models learn from.
std::vector<micsim::SourceClip> synth_rest_corpus(double minutes, double clip_seconds, std::uint64_t seed,
                                                  const SynthConfig& cfg = {});

// Renders labeled clips through a microphone (per-clip noise stream from the id).
std::vector<LabeledClip> render(const std::vector<LabeledClip>& clips, const micsim::MicProfile& mic);

// Speech-Commands layout: one folder per class of 16 kHz WAVs. Folders named
// after a keyword map to it, "_background_noise_" is skipped, anything else is Unknown.
std::vector<LabeledClip> load_keyword_dir(const std::filesystem::path& dir);
void write_keyword_dir(const std::vector<LabeledClip>& clips, const std::filesystem::path& dir);

}  // namespace m2m::eval
