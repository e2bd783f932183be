#include "m2m/config_io.hpp"

#include <fstream>

#include "m2m/error.hpp"

namespace m2m {

json stft_to_json(const dsp::StftConfig& cfg) {
  return {{"window_ms", cfg.window_ms},
          {"hop_ms", cfg.hop_ms},
          {"fft_size", cfg.fft_size},
          {"window", "hamming"},
          {"sample_rate_hz", cfg.sample_rate_hz}};
}

dsp::StftConfig stft_from_json(const json& j) {
  dsp::StftConfig cfg;
  try {
    cfg.window_ms = j.value("window_ms", cfg.window_ms);
    cfg.hop_ms = j.value("hop_ms", cfg.hop_ms);
    cfg.fft_size = j.value("fft_size", cfg.fft_size);
    cfg.sample_rate_hz = j.value("sample_rate_hz", cfg.sample_rate_hz);
    if (j.value("window", std::string("hamming")) != "hamming") throw ConfigError("only the hamming window is supported");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad stft config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

json patch_to_json(const dsp::PatchSize& p) { return {{"freq", p.freq}, {"time", p.time}}; }

dsp::PatchSize patch_from_json(const json& j) {
  dsp::PatchSize p;
  try {
    p.freq = j.value("freq", p.freq);
    p.time = j.value("time", p.time);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad patch config: ") + e.what());
  }
  if (p.freq <= 0 || p.time <= 0 || p.freq % 16 != 0 || p.time % 16 != 0) {
    throw ConfigError("patch dims must be positive multiples of 16");
  }
  return p;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace m2m
