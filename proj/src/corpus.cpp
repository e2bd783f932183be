#include "m2m/eval/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "m2m/error.hpp"

namespace m2m::eval {

namespace fs = std::filesystem;

const std::vector<std::string>& keyword_classes() {
  static const std::vector<std::string> classes = {"yes",  "no", "up",  "down", "left", "right", "on",
                                                   "off",  "stop", "go", "zero", "one",  "Unknown"};
  return classes;
}

int unknown_class() { return static_cast<int>(keyword_classes().size()) - 1; }

namespace {

constexpr double kKeywordF1[] = {350.0, 450.0};
constexpr double kKeywordF2[] = {1200.0, 1500.0, 1800.0};
constexpr double kUnknownF2[] = {1350.0, 1650.0};

struct Word {
  double f0, f1, f2, f2_amp, level;
};

class Voice {
 public:
  Voice(const SynthConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  Word word(double f1, double f2, double f2_amp) {
    const double j = cfg_.formant_jitter;
    return {uniform(cfg_.f0_lo_hz, cfg_.f0_hi_hz), f1 * uniform(1 - j, 1 + j), f2 * uniform(1 - j, 1 + j), f2_amp,
            std::pow(10.0, -uniform(0.0, cfg_.level_db_range) / 20.0)};
  }

  // White breath noise, scaled to the configured RMS level.
  std::vector<double> noise(std::size_t n) {
    std::vector<double> out(n);
    std::normal_distribution<double> g(0.0, 1.0);
    double acc = 0.0;
    for (auto& v : out) {
      v = g(rng_);
      acc += v * v;
    }
    const double scale = std::pow(10.0, cfg_.noise_dbfs / 20.0) / std::sqrt(acc / static_cast<double>(n));
    for (auto& v : out) v *= scale;
    return out;
  }

  void add(std::vector<double>& buf, std::size_t start, std::size_t len, const Word& w) {
    const double sr = dsp::kSampleRate;
    const std::size_t ramp = std::min<std::size_t>(len / 2, static_cast<std::size_t>(0.03 * sr));
    const double p0 = uniform(0, 2 * std::numbers::pi), p1 = uniform(0, 2 * std::numbers::pi),
                 p2 = uniform(0, 2 * std::numbers::pi);
    for (std::size_t i = 0; i < len && start + i < buf.size(); ++i) {
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
      if (len - 1 - i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (len - 1 - i) / ramp);
      const double t = i / sr;
      const double s = cfg_.f0_amp * std::sin(2 * std::numbers::pi * w.f0 * t + p0) +
                       cfg_.f1_amp * std::sin(2 * std::numbers::pi * w.f1 * t + p1) +
                       w.f2_amp * std::sin(2 * std::numbers::pi * w.f2 * t + p2);
      buf[start + i] += w.level * env * s;
    }
  }

  const SynthConfig& cfg() const { return cfg_; }

 private:
  SynthConfig cfg_;
  std::mt19937_64 rng_;
};

AudioClip to_clip(const std::vector<double>& buf) {
  AudioClip c;
  c.samples.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) c.samples[i] = static_cast<float>(std::clamp(buf[i], -1.0, 1.0));
  return c;
}

Word keyword_word(Voice& v, int label) {
  const auto& cfg = v.cfg();
  if (label == unknown_class()) {
    std::uniform_int_distribution<int> pick(0, 1);
    const double f1 = kKeywordF1[pick(v.rng())];
    const double f2 = kUnknownF2[pick(v.rng())];
    return v.word(f1, f2, pick(v.rng()) ? cfg.f2_strong : cfg.f2_weak);
  }
  const int combo = label / 2;
  return v.word(kKeywordF1[combo / 3], kKeywordF2[combo % 3], label % 2 == 0 ? cfg.f2_strong : cfg.f2_weak);
}

}  // namespace

std::vector<LabeledClip> synth_keyword_clips(int per_class, std::uint64_t seed, const std::string& id_prefix,
                                             const SynthConfig& cfg) {
  if (per_class < 0) throw ConfigError("per_class must be non-negative");
  Voice voice(cfg, seed);
  const std::size_t n = dsp::kSampleRate;
  std::vector<LabeledClip> out;
  const int classes = static_cast<int>(keyword_classes().size());
  for (int i = 0; i < per_class; ++i) {
    for (int label = 0; label < classes; ++label) {
      std::vector<double> buf = voice.noise(n);
      const double len_s = voice.uniform(0.4, 0.6);
      const double onset_s = voice.uniform(0.1, 0.9 - len_s);
      voice.add(buf, static_cast<std::size_t>(onset_s * dsp::kSampleRate),
                static_cast<std::size_t>(len_s * dsp::kSampleRate), keyword_word(voice, label));
      char id[64];
      std::snprintf(id, sizeof id, "%s_%s_%04d", id_prefix.c_str(), keyword_classes()[label].c_str(), i);
      out.push_back({id, to_clip(buf), label});
    }
  }
  std::shuffle(out.begin(), out.end(), voice.rng());
  return out;
}

std::vector<micsim::SourceClip> synth_rest_corpus(double minutes, double clip_seconds, std::uint64_t seed,
                                                  const SynthConfig& cfg) {
  if (minutes < 0 || clip_seconds < 1.0) throw ConfigError("rest corpus needs minutes >= 0 and clips of at least 1 s");
  Voice voice(cfg, seed);
  const int count = static_cast<int>(std::ceil(minutes * 60.0 / clip_seconds - 1e-9));
  const std::size_t n = static_cast<std::size_t>(clip_seconds * dsp::kSampleRate);
  std::vector<micsim::SourceClip> out;
  for (int c = 0; c < count; ++c) {
    std::vector<double> buf = voice.noise(n);
    double t = voice.uniform(0.05, 0.2);
    for (;;) {
      const double len = voice.uniform(0.3, 0.6);
      if (t + len > clip_seconds - 0.05) break;
      const double f2_amp = std::exp(voice.uniform(std::log(cfg.f2_weak), std::log(cfg.f2_strong)));
      const Word w = voice.word(voice.uniform(300.0, 500.0), voice.uniform(1100.0, 1900.0), f2_amp);
      voice.add(buf, static_cast<std::size_t>(t * dsp::kSampleRate), static_cast<std::size_t>(len * dsp::kSampleRate),
                w);
      t += len + voice.uniform(0.1, 0.3);
    }
    char id[32];
    std::snprintf(id, sizeof id, "rest%05d", c);
    out.push_back({id, to_clip(buf)});
  }
  return out;
}

std::vector<LabeledClip> render(const std::vector<LabeledClip>& clips, const micsim::MicProfile& mic) {
  std::vector<LabeledClip> out;
  out.reserve(clips.size());
  for (const auto& c : clips) {
    out.push_back({c.id, micsim::apply_microphone(c.clip, mic, micsim::clip_noise_stream(c.id)), c.label});
  }
  return out;
}

std::vector<LabeledClip> load_keyword_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("keyword directory " + dir.string() + " does not exist");
  std::vector<fs::path> folders;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename() != "_background_noise_") folders.push_back(e.path());
  }
  std::sort(folders.begin(), folders.end());
  const auto& classes = keyword_classes();
  std::vector<LabeledClip> out;
  for (const auto& folder : folders) {
    const std::string name = folder.filename().string();
    const auto it = std::find(classes.begin(), classes.end(), name);
    const int label = it == classes.end() ? unknown_class() : static_cast<int>(it - classes.begin());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(folder)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back({name + "/" + f.stem().string(), dsp::read_wav(f), label});
  }
  if (out.empty()) throw InsufficientDataError("no WAV files under " + dir.string());
  return out;
}

void write_keyword_dir(const std::vector<LabeledClip>& clips, const fs::path& dir) {
  const auto& classes = keyword_classes();
  for (const auto& c : clips) {
    if (c.label < 0 || c.label >= static_cast<int>(classes.size())) throw ConfigError("label out of range");
    std::string stem = c.id.substr(c.id.find_last_of('/') + 1);
    const fs::path folder = dir / classes[c.label];
    fs::create_directories(folder);
    dsp::write_wav(c.clip, folder / (stem + ".wav"));
  }
}

}  // namespace m2m::eval
