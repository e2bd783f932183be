#include "m2m/micsim.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "m2m/error.hpp"

namespace m2m::micsim {

using nlohmann::json;

void TransferFunction::validate() const {
  bool any = false;
  for (double g : gains) {
    if (!std::isfinite(g) || g < 0) throw ConfigError("transfer function gains must be finite and non-negative");
    any = any || g > 0;
  }
  if (!any) throw ConfigError("transfer function must have at least one positive gain");
}

MicProfile MicProfile::without_noise() const {
  MicProfile p = *this;
  p.noise_floor_db = kNoNoise;
  return p;
}

TransferFunction flat_response(const StftConfig& cfg, double gain) {
  return {std::vector<double>(static_cast<std::size_t>(cfg.freq_bins()), gain), "flat " + std::to_string(gain)};
}

TransferFunction lowpass_ramp(const StftConfig& cfg, double pass_hz, double stop_hz, double stop_gain) {
  if (!(stop_hz > pass_hz)) throw ConfigError("lowpass ramp needs stop_hz > pass_hz");
  TransferFunction tf;
  tf.description = "lowpass ramp " + std::to_string(pass_hz) + "-" + std::to_string(stop_hz) + " Hz";
  for (int k = 0; k < cfg.freq_bins(); ++k) {
    const double f = k * cfg.bin_hz();
    const double u = std::clamp((f - pass_hz) / (stop_hz - pass_hz), 0.0, 1.0);
    tf.gains.push_back(1.0 + (stop_gain - 1.0) * u);
  }
  return tf;
}

TransferFunction cosine_shelf(const StftConfig& cfg, double lo_hz, double hi_hz, double shelf_gain) {
  if (!(hi_hz > lo_hz)) throw ConfigError("shelf needs hi_hz > lo_hz");
  TransferFunction tf;
  tf.description = "cosine shelf " + std::to_string(lo_hz) + "-" + std::to_string(hi_hz) + " Hz";
  for (int k = 0; k < cfg.freq_bins(); ++k) {
    const double f = k * cfg.bin_hz();
    const double u = std::clamp((f - lo_hz) / (hi_hz - lo_hz), 0.0, 1.0);
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * u);
    tf.gains.push_back(1.0 + (shelf_gain - 1.0) * w);
  }
  return tf;
}

TransferFunction multiply(const TransferFunction& a, const TransferFunction& b) {
  if (a.gains.size() != b.gains.size()) throw ConfigError("transfer function lengths differ");
  TransferFunction tf;
  tf.description = a.description + " * " + b.description;
  for (std::size_t i = 0; i < a.gains.size(); ++i) tf.gains.push_back(a.gains[i] * b.gains[i]);
  return tf;
}

std::vector<MicProfile> preset_profiles(const StftConfig& cfg) {
  std::vector<MicProfile> out;
  out.push_back({"ref", flat_response(cfg, 1.0), kNoNoise, 11});
  out.back().tf.description = "identity";

  out.push_back({"arrayA", cosine_shelf(cfg, 2500.0, 5000.0, 0.15), -70.0, 23});

  TransferFunction ripple;
  ripple.description = "mid-band ripple";
  for (int k = 0; k < cfg.freq_bins(); ++k) {
    const double f = k * cfg.bin_hz();
    const double taper = (f > 800.0 && f < 5000.0) ? std::sin(std::numbers::pi * (f - 800.0) / 4200.0) : 0.0;
    ripple.gains.push_back(1.0 + 0.25 * taper * std::sin(2.0 * std::numbers::pi * f / 1400.0));
  }
  out.push_back({"usbC", ripple, -50.0, 37});

  TransferFunction lofi = multiply(lowpass_ramp(cfg, 500.0, 1000.0, 0.1), cosine_shelf(cfg, 1875.0, 1990.0, 10.0));
  lofi.description = "speech-band lowpass (-20 dB from 1 kHz to 1.9 kHz, unity above 2 kHz)";
  out.push_back({"lofi", lofi, kNoNoise, 41});
  for (const auto& p : out) p.tf.validate();
  return out;
}

MicProfile find_profile(const std::string& name, const StftConfig& cfg) {
  for (auto& p : preset_profiles(cfg)) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown microphone profile '" + name + "'");
}

ZeroPhaseFilter::ZeroPhaseFilter(const TransferFunction& tf, const StftConfig& cfg) {
  tf.validate();
  const int bins = cfg.freq_bins();
  if (static_cast<int>(tf.gains.size()) != bins) {
    throw ConfigError("gain vector has " + std::to_string(tf.gains.size()) + " bins, config expects " +
                      std::to_string(bins));
  }
  constexpr int kRefine = 4;
  taps_ = cfg.fft_size * kRefine;
  block_ = taps_;
  fft_size_ = 2 * taps_;

  // Interpolate gains (with Nyquist repeating the top bin) onto the fine grid.
  std::vector<std::complex<double>> fine(static_cast<std::size_t>(taps_ / 2 + 1));
  for (int j = 0; j <= taps_ / 2; ++j) {
    const double x = static_cast<double>(j) / kRefine;
    const int k0 = std::min(static_cast<int>(x), bins - 1);
    const double frac = x - k0;
    const double g0 = tf.gains[k0];
    const double g1 = k0 + 1 < bins ? tf.gains[k0 + 1] : tf.gains[bins - 1];
    fine[j] = g0 + (g1 - g0) * frac;
  }
  std::vector<double> impulse(static_cast<std::size_t>(taps_));
  dsp::Fft(taps_).inverse(fine.data(), impulse.data());
  // Centre the zero-phase impulse at delay taps_/2 inside a zero-padded frame.
  std::vector<double> delayed(static_cast<std::size_t>(fft_size_), 0.0);
  const int delay = taps_ / 2;
  for (int n = 0; n < taps_; ++n) delayed[(n + delay) % taps_] = impulse[n] / taps_;
  response_.resize(static_cast<std::size_t>(fft_size_ / 2 + 1));
  dsp::Fft(fft_size_).forward(delayed.data(), response_.data());
}

std::vector<float> ZeroPhaseFilter::apply(const std::vector<float>& x) const {
  const std::size_t len = x.size();
  const std::size_t delay = static_cast<std::size_t>(taps_ / 2);
  std::vector<double> y(len, 0.0);
  dsp::Fft fft(fft_size_);
  std::vector<double> frame(static_cast<std::size_t>(fft_size_));
  std::vector<double> out(static_cast<std::size_t>(fft_size_));
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(fft_size_ / 2 + 1));
  for (std::size_t b = 0; b < len; b += static_cast<std::size_t>(block_)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(block_), len - b);
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) frame[i] = x[b + i];
    fft.forward(frame.data(), spec.data());
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= response_[k];
    fft.inverse(spec.data(), out.data());
    // Linear convolution output of this block spans block + taps - 1 samples.
    const std::size_t span = n + static_cast<std::size_t>(taps_) - 1;
    for (std::size_t i = 0; i < span; ++i) {
      const std::size_t pos = b + i;
      if (pos >= delay && pos - delay < len) y[pos - delay] += out[i] / fft_size_;
    }
  }
  std::vector<float> result(len);
  for (std::size_t i = 0; i < len; ++i) result[i] = static_cast<float>(y[i]);
  return result;
}

namespace {

AudioClip render(const AudioClip& clip, const MicProfile& profile, const ZeroPhaseFilter& filter,
                 std::uint64_t noise_stream) {
  if (profile.noise_floor_db > 0) throw ConfigError("noise floor must be <= 0 dBFS");
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.samples = filter.apply(clip.samples);
  if (std::isfinite(profile.noise_floor_db)) {
    std::mt19937_64 rng(profile.seed * 0x9E3779B97F4A7C15ull ^ noise_stream);
    std::normal_distribution<double> noise(0.0, std::pow(10.0, profile.noise_floor_db / 20.0));
    for (float& s : out.samples) s = static_cast<float>(s + noise(rng));
  }
  for (float& s : out.samples) s = std::clamp(s, -1.0f, 1.0f);
  return out;
}

}  // namespace

AudioClip apply_microphone(const AudioClip& clip, const MicProfile& profile, std::uint64_t noise_stream,
                           const StftConfig& cfg) {
  return render(clip, profile, ZeroPhaseFilter(profile.tf, cfg), noise_stream);
}

std::uint64_t clip_noise_stream(const std::string& clip_id) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : clip_id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<DomainDataset> generate_domains(const std::vector<SourceClip>& corpus,
                                            const std::vector<MicProfile>& profiles, bool unpaired,
                                            std::uint64_t split_seed, const StftConfig& cfg) {
  if (corpus.empty()) throw InsufficientDataError("corpus is empty");
  if (profiles.empty()) throw ConfigError("no profiles given");
  if (unpaired && profiles.size() < 2) throw ConfigError("unpaired generation needs at least two profiles");
  if (unpaired && corpus.size() < profiles.size()) {
    throw InsufficientDataError("corpus of " + std::to_string(corpus.size()) + " clips cannot be split across " +
                                std::to_string(profiles.size()) + " domains");
  }
  std::set<std::string> names;
  for (const auto& p : profiles) {
    if (!names.insert(p.name).second) throw ConfigError("duplicate profile name '" + p.name + "'");
  }

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (unpaired) std::shuffle(order.begin(), order.end(), std::mt19937_64(split_seed));
  const std::size_t share = unpaired ? corpus.size() / profiles.size() : corpus.size();

  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d < profiles.size(); ++d) {
    DomainDataset ds;
    ds.domain_id = profiles[d].name;
    ds.profile = profiles[d];
    const ZeroPhaseFilter filter(profiles[d].tf, cfg);
    const std::size_t begin = unpaired ? d * share : 0;
    std::vector<std::size_t> picks(order.begin() + begin, order.begin() + begin + share);
    if (unpaired) std::sort(picks.begin(), picks.end());
    for (std::size_t i : picks) {
      const SourceClip& src = corpus[i];
      ds.clip_ids.push_back(src.id);
      ds.clips.push_back(render(src.clip, profiles[d], filter, clip_noise_stream(src.id)));
    }
    out.push_back(std::move(ds));
  }
  if (unpaired) {
    for (auto& a : out) {
      for (const auto& b : out) {
        if (&a != &b) a.unpaired_with.insert(b.domain_id);
      }
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t j = i + 1; j < out.size(); ++j) require_disjoint(out[i], out[j]);
    }
  }
  return out;
}

void require_disjoint(const DomainDataset& a, const DomainDataset& b) {
  std::set<std::string> ids(a.clip_ids.begin(), a.clip_ids.end());
  for (const auto& id : b.clip_ids) {
    if (ids.count(id)) {
      throw PairingViolationError("domains '" + a.domain_id + "' and '" + b.domain_id + "' share clip '" + id + "'");
    }
  }
}

void write_domain(const DomainDataset& domain, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m;
  m["domain_id"] = domain.domain_id;
  m["profile"] = {{"name", domain.profile.name},
                  {"description", domain.profile.tf.description},
                  {"noise_floor_db", std::isfinite(domain.profile.noise_floor_db) ? json(domain.profile.noise_floor_db)
                                                                                   : json(nullptr)},
                  {"seed", domain.profile.seed},
                  {"gains", domain.profile.tf.gains}};
  m["clips"] = domain.clip_ids;
  m["unpaired_with"] = domain.unpaired_with;
  for (std::size_t i = 0; i < domain.clips.size(); ++i) {
    dsp::write_wav(domain.clips[i], dir / (domain.clip_ids[i] + ".wav"));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

DomainDataset read_domain(const std::filesystem::path& dir, const StftConfig& cfg) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
    DomainDataset ds;
    ds.domain_id = m.at("domain_id").get<std::string>();
    const json& p = m.at("profile");
    ds.profile.name = p.at("name").get<std::string>();
    ds.profile.tf.description = p.value("description", "");
    ds.profile.tf.gains = p.at("gains").get<std::vector<double>>();
    ds.profile.noise_floor_db = p.at("noise_floor_db").is_null() ? kNoNoise : p.at("noise_floor_db").get<double>();
    ds.profile.seed = p.value("seed", std::uint64_t{0});
    if (static_cast<int>(ds.profile.tf.gains.size()) != cfg.freq_bins()) {
      throw ConfigError("manifest gains do not match the STFT config");
    }
    ds.clip_ids = m.at("clips").get<std::vector<std::string>>();
    for (const auto& id : m.value("unpaired_with", std::vector<std::string>{})) ds.unpaired_with.insert(id);
    for (const auto& id : ds.clip_ids) ds.clips.push_back(dsp::read_wav(dir / (id + ".wav")));
    return ds;
  } catch (const json::exception& e) {
    throw FormatError("bad manifest in " + dir.string() + ": " + e.what());
  }
}

AudioClip frequency_sweep(double duration_s, double f_lo, double f_hi, int sample_rate_hz) {
  if (!(duration_s > 0) || !(f_lo > 0) || !(f_hi > f_lo) || f_hi > sample_rate_hz / 2.0) {
    throw ConfigError("sweep needs duration > 0 and 0 < f_lo < f_hi <= Nyquist");
  }
  AudioClip clip;
  clip.sample_rate_hz = sample_rate_hz;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  clip.samples.resize(n);
  const double k = std::log(f_hi / f_lo) / duration_s;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate_hz;
    const double phase = 2.0 * std::numbers::pi * f_lo * (std::exp(k * t) - 1.0) / k;
    clip.samples[i] = static_cast<float>(0.8 * std::sin(phase));
  }
  return clip;
}

}  // namespace m2m::micsim
