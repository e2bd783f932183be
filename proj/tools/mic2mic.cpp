// mic2mic: simulate microphones, train and apply translation models, calibrate,
// train and evaluate the keyword model, and run the deployment pipeline.
//
// Every subcommand accepts --config FILE (JSON). Top-level keys apply to any
// subcommand with a matching option, a section named after the subcommand
// applies to it alone, and "stft" sets the feature configuration. Flags given
// on the command line win over the file.
//
// Exit codes: 0 success, 2 configuration or contract error, 3 data error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "m2m/calibrate.hpp"
#include "m2m/config_io.hpp"
#include "m2m/error.hpp"
#include "m2m/eval/evaluate.hpp"
#include "m2m/pipeline.hpp"

namespace fs = std::filesystem;
using namespace m2m;

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

template <typename T>
void need(const T& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
}

// ---- config file overlay ----

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

std::vector<std::string> to_results(const json& v) {
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& e : v) {
      auto one = to_results(e);
      out.insert(out.end(), one.begin(), one.end());
    }
    return out;
  }
  if (v.is_string()) return {v.get<std::string>()};
  if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
  if (v.is_number()) return {v.dump()};
  throw ConfigError("config value " + v.dump() + " is not a scalar or list");
}

// Returns false when `sub` has no option named after `key`.
bool overlay(CLI::App& sub, const std::string& key, const json& value) {
  CLI::Option* opt = sub.get_option_no_throw(flag_name(key));
  if (!opt || opt->get_name() == "--config") return false;
  if (opt->count() > 0) return true;  // command line wins
  for (const auto& r : to_results(value)) opt->add_result(r);
  opt->run_callback();
  return true;
}

struct Shared {
  std::string config_path;
  dsp::StftConfig stft;
};

void apply_config(CLI::App& app, CLI::App& sub, Shared& shared) {
  if (shared.config_path.empty()) return;
  const json cfg = read_json_file(shared.config_path);
  if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");
  std::map<std::string, CLI::App*> sections;
  for (CLI::App* s : app.get_subcommands({})) sections[s->get_name()] = s;

  auto set_stft = [&](const json& j) {
    if (!j.is_object()) throw ConfigError("\"stft\" must be an object");
    shared.stft = stft_from_json(j);
  };
  if (cfg.contains("stft")) set_stft(cfg["stft"]);
  for (const auto& [key, value] : cfg.items()) {
    if (key == "stft" || sections.count(key)) continue;
    bool known = false;
    for (const auto& [name, s] : sections) known |= s->get_option_no_throw(flag_name(key)) != nullptr;
    if (!known) throw ConfigError("unknown config key '" + key + "'");
    overlay(sub, key, value);
  }
  if (!cfg.contains(sub.get_name())) return;
  const json& section = cfg[sub.get_name()];
  if (!section.is_object()) throw ConfigError("config section '" + sub.get_name() + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    if (key == "stft") {
      set_stft(value);
      continue;
    }
    if (!overlay(sub, key, value)) {
      throw ConfigError("unknown key '" + key + "' in config section '" + sub.get_name() + "'");
    }
  }
}

// ---- shared option groups ----

struct TrainOptions {
  int epochs = 10;
  long steps = 0;
  int batch = 8;
  int width = 32;
  std::uint64_t seed = 1;
  double lr = 2e-4;
  double alpha = 1.0, beta = 10.0, gamma = 5.0;
  double paired_weight = 10.0;
  std::string mode = "unpaired";
  int patch_freq = 64, patch_time = 64, stride = 32;

  void add(CLI::App& sub) {
    sub.add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    sub.add_option("--steps", steps, "Exact number of updates; overrides --epochs when > 0")->capture_default_str();
    sub.add_option("--batch", batch, "Patches per batch")->capture_default_str();
    sub.add_option("--width", width, "Base channel width of the networks")->capture_default_str();
    sub.add_option("--seed", seed, "Training seed")->capture_default_str();
    sub.add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    sub.add_option("--adversarial-weight", alpha)->capture_default_str();
    sub.add_option("--cycle-weight", beta)->capture_default_str();
    sub.add_option("--identity-weight", gamma)->capture_default_str();
    sub.add_option("--paired-weight", paired_weight, "L1 weight to the aligned target (paired mode)")
        ->capture_default_str();
    sub.add_option("--mode", mode, "unpaired or paired")->capture_default_str();
    sub.add_option("--patch-freq", patch_freq, "Patch height in bins")->capture_default_str();
    sub.add_option("--patch-time", patch_time, "Patch width in frames")->capture_default_str();
    sub.add_option("--stride", stride, "Patch hop in frames")->capture_default_str();
  }

  cyclegan::TrainConfig config() const {
    cyclegan::TrainConfig c;
    c.epochs = epochs;
    c.total_steps = steps;
    c.batch_size = batch;
    c.width = width;
    c.seed = seed;
    c.adam.lr = lr;
    c.weights = {alpha, beta, gamma};
    c.paired_weight = paired_weight;
    if (mode == "unpaired") {
      c.mode = cyclegan::TrainMode::Unpaired;
    } else if (mode == "paired") {
      c.mode = cyclegan::TrainMode::Paired;
      c.weights.beta = 0.0;
    } else {
      throw ConfigError("--mode must be unpaired or paired, got '" + mode + "'");
    }
    c.validate();
    return c;
  }

  dsp::PatchSize patch() const { return {patch_freq, patch_time}; }
};

std::vector<micsim::MicProfile> profiles_named(const std::vector<std::string>& names, const dsp::StftConfig& stft) {
  std::vector<micsim::MicProfile> out;
  for (const auto& n : names) out.push_back(micsim::find_profile(n, stft));
  return out;
}

std::vector<micsim::SourceClip> read_wav_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InsufficientDataError("no .wav files in " + dir.string());
  std::vector<micsim::SourceClip> out;
  for (const auto& f : files) out.push_back({f.stem().string(), dsp::read_wav(f)});
  return out;
}

// ---- subcommands ----

struct Simulate {
  std::string kind = "rest";
  std::vector<std::string> profiles;
  std::string out;
  double minutes = 15.0;
  double clip_seconds = 4.0;
  int per_class = 20;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 7;
  std::string mode = "unpaired";
  std::string source_dir;

  void add(CLI::App& sub) {
    sub.add_option("--kind", kind, "rest (unlabeled speech) or keywords")->capture_default_str();
    sub.add_option("--profiles", profiles, "Microphone profiles: ref, arrayA, usbC, lofi")->delimiter(',');
    sub.add_option("--out", out, "Output directory, one subdirectory per profile");
    sub.add_option("--minutes", minutes, "Minutes of rest audio before splitting")->capture_default_str();
    sub.add_option("--clip-seconds", clip_seconds, "Length of rest clips")->capture_default_str();
    sub.add_option("--per-class", per_class, "Keyword clips per class")->capture_default_str();
    sub.add_option("--seed", seed, "Corpus seed")->capture_default_str();
    sub.add_option("--split-seed", split_seed, "Unpaired split seed")->capture_default_str();
    sub.add_option("--mode", mode, "unpaired or paired (rest only)")->capture_default_str();
    sub.add_option("--source-dir", source_dir, "Use these WAVs instead of synthetic rest audio");
  }

  int run(const Shared& s) const {
    need(profiles, "--profiles");
    need(out, "--out");
    const auto mics = profiles_named(profiles, s.stft);
    if (kind == "keywords") {
      if (per_class < 1) throw ConfigError("--per-class must be positive");
      const auto clips = eval::synth_keyword_clips(per_class, seed, "kw");
      for (const auto& mic : mics) {
        eval::write_keyword_dir(eval::render(clips, mic), fs::path(out) / mic.name);
        std::cout << mic.name << ": " << clips.size() << " keyword clips\n";
      }
      return 0;
    }
    if (kind != "rest") throw ConfigError("--kind must be rest or keywords, got '" + kind + "'");
    if (mode != "unpaired" && mode != "paired") throw ConfigError("--mode must be unpaired or paired");
    const auto corpus = source_dir.empty() ? eval::synth_rest_corpus(minutes, clip_seconds, seed)
                                           : read_wav_dir(source_dir);
    const auto domains = micsim::generate_domains(corpus, mics, mode == "unpaired", split_seed, s.stft);
    for (const auto& d : domains) {
      micsim::write_domain(d, fs::path(out) / d.domain_id);
      double seconds = 0.0;
      for (const auto& c : d.clips) seconds += c.duration_s();
      std::cout << d.domain_id << ": " << d.clips.size() << " clips, " << fixed6(seconds / 60.0) << " min\n";
    }
    return 0;
  }
};

struct TrainCycleGan {
  std::string domain_a, domain_b, out, export_path, log_path;
  TrainOptions train;

  void add(CLI::App& sub) {
    sub.add_option("--domain-a", domain_a, "Source (deployment) microphone domain directory");
    sub.add_option("--domain-b", domain_b, "Target (training) microphone domain directory");
    sub.add_option("--out", out, "Training checkpoint");
    sub.add_option("--export", export_path, "Deployable source-to-target generator");
    sub.add_option("--log", log_path, "Per-epoch loss CSV");
    train.add(sub);
  }

  int run(const Shared& s) const {
    need(domain_a, "--domain-a");
    need(domain_b, "--domain-b");
    need(out, "--out");
    const cyclegan::TrainConfig cfg = train.config();
    const auto a = micsim::read_domain(domain_a, s.stft);
    const auto b = micsim::read_domain(domain_b, s.stft);
    if (cfg.mode == cyclegan::TrainMode::Unpaired) micsim::require_disjoint(a, b);
    const auto bank_a = cyclegan::make_patch_bank(a, s.stft, train.patch(), train.stride);
    const auto bank_b = cyclegan::make_patch_bank(b, s.stft, train.patch(), train.stride);
    std::cout << "patches: " << bank_a.count() << " (" << a.domain_id << "), " << bank_b.count() << " ("
              << b.domain_id << ")\n";
    const cyclegan::ModelMeta meta{a.domain_id, b.domain_id, s.stft, train.patch(), train.width};
    const auto result = cyclegan::train(bank_a, bank_b, cfg, meta, [](const cyclegan::EpochLog& e, const auto&) {
      std::cout << "epoch " << e.epoch << " steps " << e.steps << " G " << fixed6(e.gen_total) << " cycle "
                << fixed6(e.cycle) << " identity " << fixed6(e.id) << " D_a " << fixed6(e.d_a) << " D_b "
                << fixed6(e.d_b) << '\n';
      return true;
    });
    cyclegan::save_model(result.model, out);
    if (!export_path.empty()) cyclegan::export_translator(result.model, export_path);
    if (!log_path.empty()) write_text(log_path, cyclegan::training_log_csv(result.log));
    return 0;
  }
};

struct Translate {
  std::string model, in, out;

  void add(CLI::App& sub) {
    sub.add_option("--model", model, "Exported generator or training checkpoint");
    sub.add_option("--in", in, "WAV file or domain directory");
    sub.add_option("--out", out, "Spectrogram file, or directory for a domain input");
  }

  int run(const Shared&) const {
    need(model, "--model");
    need(in, "--in");
    need(out, "--out");
    const auto t = cyclegan::load_translator(model);
    if (fs::is_directory(in)) {
      const auto d = micsim::read_domain(in, t.meta.stft);
      fs::create_directories(out);
      for (std::size_t i = 0; i < d.clips.size(); ++i) {
        dsp::write_spectrogram(t(dsp::stft_log_spectrogram(d.clips[i], t.meta.stft)).bins,
                               fs::path(out) / (d.clip_ids[i] + ".m2mspec"));
      }
      std::cout << "translated " << d.clips.size() << " clips\n";
      return 0;
    }
    const auto spec = t(dsp::stft_log_spectrogram(dsp::read_wav(in), t.meta.stft));
    dsp::write_spectrogram(spec.bins, out);
    std::cout << "translated " << spec.freq_bins() << "x" << spec.frames() << '\n';
    return 0;
  }
};

struct Calibrate {
  std::string test_mic, train_mic, test_recording, train_recording, out;
  double sweep_seconds = 4.0;

  void add(CLI::App& sub) {
    sub.add_option("--test-mic", test_mic, "Simulated deployment microphone profile");
    sub.add_option("--train-mic", train_mic, "Simulated training microphone profile");
    sub.add_option("--sweep-seconds", sweep_seconds, "Length of the simulated sweep")->capture_default_str();
    sub.add_option("--test-recording", test_recording, "Sweep recorded by the deployment microphone (WAV)");
    sub.add_option("--train-recording", train_recording, "Sweep recorded by the training microphone (WAV)");
    sub.add_option("--out", out, "Offset file (JSON)");
  }

  int run(const Shared& s) const {
    need(out, "--out");
    calibrate::CalibrationOffset offset;
    if (!test_recording.empty() || !train_recording.empty()) {
      need(test_recording, "--test-recording");
      need(train_recording, "--train-recording");
      offset = calibrate::compute_offset(calibrate::measure_psd(dsp::read_wav(test_recording), s.stft),
                                         calibrate::measure_psd(dsp::read_wav(train_recording), s.stft));
    } else {
      need(test_mic, "--test-mic");
      need(train_mic, "--train-mic");
      offset = calibrate::sweep_offset(micsim::find_profile(test_mic, s.stft), micsim::find_profile(train_mic, s.stft),
                                       s.stft, sweep_seconds);
    }
    calibrate::save_offset(offset, out);
    const auto floored = std::count(offset.floored.begin(), offset.floored.end(), true);
    std::cout << "bins " << offset.gamma.size() << " floored " << floored << '\n';
    return 0;
  }
};

struct TrainKeyword {
  std::string train_dir, val_dir, out, report;
  std::vector<std::string> mics;
  eval::KeywordTrainConfig cfg;

  void add(CLI::App& sub) {
    sub.add_option("--train-dir", train_dir, "Keyword folders (one per class)");
    sub.add_option("--val-dir", val_dir, "Validation keyword folders");
    sub.add_option("--mics", mics, "Microphones the training audio was recorded with")->delimiter(',');
    sub.add_option("--out", out, "Keyword checkpoint");
    sub.add_option("--report", report, "Validation report (JSON)");
    sub.add_option("--epochs", cfg.epochs)->capture_default_str();
    sub.add_option("--batch", cfg.batch_size)->capture_default_str();
    sub.add_option("--lr", cfg.lr)->capture_default_str();
    sub.add_option("--seed", cfg.seed)->capture_default_str();
  }

  int run(const Shared& s) const {
    need(train_dir, "--train-dir");
    need(mics, "--mics");
    need(out, "--out");
    cfg.validate();
    const auto model = eval::train_keyword(eval::load_keyword_dir(train_dir), mics, cfg, s.stft);
    eval::save_keyword(model, out);
    if (!val_dir.empty()) {
      const auto domain = join(model.training_mics, "+");
      const auto r = eval::evaluate(model, eval::load_keyword_dir(val_dir), eval::Pipeline::Unmodified, {}, domain,
                                    domain);
      std::cout << "validation accuracy: " << fixed6(r.accuracy) << '\n';
      if (!report.empty()) write_json_file(eval::report_to_json(r), report);
    }
    return 0;
  }
};

struct Eval {
  std::string model, test_dir, pipeline_name = "unmodified", translator, offset, aligned_dir, upper_dir;
  std::string train_domain, test_domain, report, csv;

  void add(CLI::App& sub) {
    sub.add_option("--model", model, "Keyword checkpoint");
    sub.add_option("--test-dir", test_dir, "Keyword folders recorded by the deployment microphone");
    sub.add_option("--pipeline", pipeline_name, "unmodified, calibrated, mic2mic or paired-gan")->capture_default_str();
    sub.add_option("--translator", translator, "Translation model (mic2mic, paired-gan)");
    sub.add_option("--offset", offset, "Calibration offset (calibrated)");
    sub.add_option("--aligned-dir", aligned_dir, "Same clips from the training microphone, for PSNR");
    sub.add_option("--upper-dir", upper_dir, "Same-microphone test folders, for recovery");
    sub.add_option("--train-domain", train_domain, "Report label (default: the model's microphones)");
    sub.add_option("--test-domain", test_domain, "Report label (default: the test folder name)");
    sub.add_option("--report", report, "Report (JSON)");
    sub.add_option("--csv", csv, "Append one report row to this CSV");
  }

  int run(const Shared&) const {
    need(model, "--model");
    need(test_dir, "--test-dir");
    const auto kind = eval::parse_pipeline(pipeline_name);
    const auto kw = eval::load_keyword(model);
    std::optional<cyclegan::Translator> t;
    std::optional<calibrate::CalibrationOffset> off;
    if (!translator.empty()) t = cyclegan::load_translator(translator);
    if (!offset.empty()) off = calibrate::load_offset(offset);
    // Contract checks (feature settings, target microphone, bin count).
    const pipeline::DeploymentPipeline contracts(kw, kind, t, off);
    eval::PipelineArtifacts artifacts{t ? &*t : nullptr, off ? &*off : nullptr};

    const auto test = eval::load_keyword_dir(test_dir);
    std::vector<eval::LabeledClip> aligned;
    if (!aligned_dir.empty()) aligned = eval::load_keyword_dir(aligned_dir);
    const std::string train_label = train_domain.empty() ? join(kw.training_mics, "+") : train_domain;
    const std::string test_label = test_domain.empty() ? fs::path(test_dir).filename().string() : test_domain;
    auto r = eval::evaluate(kw, test, kind, artifacts, train_label, test_label, aligned_dir.empty() ? nullptr : &aligned);
    if (!upper_dir.empty()) {
      const auto upper = eval::evaluate(kw, eval::load_keyword_dir(upper_dir), eval::Pipeline::Unmodified, {},
                                        train_label, train_label);
      const auto unmodified = kind == eval::Pipeline::Unmodified
                                  ? r
                                  : eval::evaluate(kw, test, eval::Pipeline::Unmodified, {}, train_label, test_label);
      eval::attach_recovery(r, upper, unmodified);
    }
    std::cout << "accuracy: " << fixed6(r.accuracy) << '\n';
    if (r.psnr_mean) std::cout << "psnr_mean: " << fixed6(*r.psnr_mean) << '\n';
    if (r.recovery) std::cout << "recovery: " << fixed6(*r.recovery) << '\n';
    if (!report.empty()) write_json_file(eval::report_to_json(r), report);
    if (!csv.empty()) {
      const bool fresh = !fs::exists(csv);
      std::ofstream f(csv, std::ios::app);
      if (!f) throw ConfigError("cannot write " + csv);
      if (fresh) f << eval::report_csv_header() << '\n';
      f << eval::report_csv_row(r) << '\n';
    }
    return 0;
  }
};

struct SweepDataAmount {
  std::string model, test_dir, source_mic, target_mic, pool_dir, out;
  std::vector<double> minutes{0, 1, 5, 15};
  double pool_minutes = 0.0;
  double clip_seconds = 4.0;
  std::uint64_t pool_seed = 11;
  std::uint64_t split_seed = 7;
  TrainOptions train;

  void add(CLI::App& sub) {
    sub.add_option("--model", model, "Keyword checkpoint trained on the target microphone");
    sub.add_option("--test-dir", test_dir, "Keyword folders recorded by the source microphone");
    sub.add_option("--source-mic", source_mic, "Deployment microphone profile");
    sub.add_option("--target-mic", target_mic, "Training microphone profile");
    sub.add_option("--budgets", minutes, "Minutes of audio per microphone, increasing")->delimiter(',');
    sub.add_option("--pool-dir", pool_dir, "Unlabeled WAVs to split between the microphones");
    sub.add_option("--pool-minutes", pool_minutes, "Synthetic pool size (default: twice the largest budget + 1)");
    sub.add_option("--clip-seconds", clip_seconds)->capture_default_str();
    sub.add_option("--pool-seed", pool_seed)->capture_default_str();
    sub.add_option("--split-seed", split_seed)->capture_default_str();
    sub.add_option("--out", out, "Curve CSV (minutes,accuracy)");
    train.add(sub);
  }

  int run(const Shared& s) const {
    need(model, "--model");
    need(test_dir, "--test-dir");
    need(source_mic, "--source-mic");
    need(target_mic, "--target-mic");
    need(minutes, "--budgets");
    const auto kw = eval::load_keyword(model);
    eval::SweepSetup setup;
    setup.stft = kw.stft;
    setup.source_mic = micsim::find_profile(source_mic, kw.stft);
    setup.target_mic = micsim::find_profile(target_mic, kw.stft);
    setup.split_seed = split_seed;
    setup.patch = train.patch();
    setup.stride = train.stride;
    setup.train = train.config();
    setup.model = &kw;
    setup.test = eval::load_keyword_dir(test_dir);
    const double largest = *std::max_element(minutes.begin(), minutes.end());
    setup.pool = pool_dir.empty()
                     ? eval::synth_rest_corpus(pool_minutes > 0 ? pool_minutes : 2.0 * largest + 1.0, clip_seconds,
                                               pool_seed)
                     : read_wav_dir(pool_dir);
    (void)s;
    const auto curve = eval::data_amount_sweep(minutes, setup, [](double m, const cyclegan::TrainResult& r) {
      std::cout << "trained " << m << " min: " << r.log.size() << " epochs, final cycle "
                << fixed6(r.log.empty() ? 0.0 : r.log.back().cycle) << '\n';
    });
    const std::string text = eval::sweep_csv(curve);
    std::cout << text;
    if (!out.empty()) write_text(out, text);
    return 0;
  }
};

struct BenchLatency {
  std::string model;
  double seconds = 5.0;
  int repeat = 20;
  int width = 32;
  int patch_freq = 64, patch_time = 64;
  std::uint64_t seed = 1;

  void add(CLI::App& sub) {
    sub.add_option("--model", model, "Translation model (default: untrained generator)");
    sub.add_option("--seconds", seconds, "Audio length")->capture_default_str();
    sub.add_option("--repeat", repeat, "Timed runs")->capture_default_str();
    sub.add_option("--width", width, "Generator width without --model")->capture_default_str();
    sub.add_option("--patch-freq", patch_freq)->capture_default_str();
    sub.add_option("--patch-time", patch_time)->capture_default_str();
    sub.add_option("--seed", seed)->capture_default_str();
  }

  int run(const Shared& s) const {
    if (!(seconds >= 1.0)) throw ConfigError("--seconds must be at least 1");
    cyclegan::Translator t;
    if (!model.empty()) {
      t = cyclegan::load_translator(model);
    } else {
      t.g = cyclegan::Generator<float>("g_ab", width);
      t.g.init(seed);
      t.meta.stft = s.stft;
      t.meta.patch = {patch_freq, patch_time};
      t.meta.width = width;
    }
    const auto clip = eval::synth_rest_corpus(seconds / 60.0, seconds, seed).front().clip;
    const auto stats = pipeline::bench_translation(t, clip, repeat);
    std::cout << "seconds " << seconds << " repeat " << stats.repeats << " median_ms " << fixed6(stats.median_ms)
              << " p95_ms " << fixed6(stats.p95_ms) << " min_ms " << fixed6(stats.min_ms) << '\n';
    return 0;
  }
};

struct Pipeline {
  pipeline::PipelineConfig cfg;
  std::string keyword_model, translator, offset, pipeline_name = "unmodified", in, out;
  bool decide = false;

  void add(CLI::App& sub) {
    sub.add_option("--keyword-model", keyword_model, "Keyword checkpoint");
    sub.add_option("--translator", translator, "Exported translation model");
    sub.add_option("--offset", offset, "Calibration offset");
    sub.add_option("--pipeline", pipeline_name, "unmodified, calibrated, mic2mic or paired-gan")
        ->capture_default_str();
    sub.add_option("--deployment-mic", cfg.deployment_mic, "Microphone the clip was recorded with");
    sub.add_option("--vad-frame-ms", cfg.vad.frame_ms)->capture_default_str();
    sub.add_option("--vad-threshold-db", cfg.vad.threshold_db)->capture_default_str();
    sub.add_option("--in", in, "WAV clip to classify");
    sub.add_option("--out", out, "Result (JSON)");
    sub.add_flag("--decide", decide, "Only print whether a translation model must be trained");
  }

  int run(const Shared&) {
    need(keyword_model, "--keyword-model");
    if (decide) {
      need(cfg.deployment_mic, "--deployment-mic");
      const auto d = pipeline::training_manager_decide(pipeline::metadata_of(eval::load_keyword(keyword_model)),
                                                       cfg.deployment_mic);
      if (d.kind == pipeline::Decision::Kind::NoTranslationNeeded) {
        std::cout << "no translation needed\n";
      } else {
        std::cout << "train translation " << cfg.deployment_mic << " -> " << d.target_mic << '\n';
      }
      return 0;
    }
    need(in, "--in");
    cfg.keyword_model = keyword_model;
    cfg.translator = translator;
    cfg.offset = offset;
    cfg.pipeline = eval::parse_pipeline(pipeline_name);
    const auto r = pipeline::run_pipeline(dsp::read_wav(in), cfg);
    const json j = pipeline::result_to_json(r);
    std::cout << j.dump(2) << '\n';
    if (!out.empty()) write_json_file(j, out);
    return 0;
  }
};

int dispatch(int argc, char** argv) {
  CLI::App app{"Microphone translation toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Shared shared;

  Simulate simulate;
  TrainCycleGan train_gan;
  Translate translate;
  Calibrate calibrate_cmd;
  TrainKeyword train_kw;
  Eval evaluate;
  SweepDataAmount sweep;
  BenchLatency bench;
  Pipeline pipe;

  std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", shared.config_path, "JSON config file");
    cmd.add(*sub);
    commands.emplace_back(sub, [&cmd, &shared] { return cmd.run(shared); });
  };
  add("simulate", "Render a corpus through simulated microphones", simulate);
  add("train-cyclegan", "Train a translation model between two microphone domains", train_gan);
  add("translate", "Translate spectrograms with a trained model", translate);
  add("calibrate", "Derive a per-bin calibration offset from a sweep", calibrate_cmd);
  add("train-keyword", "Train the keyword classifier", train_kw);
  add("eval", "Evaluate the keyword classifier through a pipeline", evaluate);
  add("sweep-data-amount", "Accuracy against minutes of translation training audio", sweep);
  add("bench-latency", "Time translation of an audio segment", bench);
  add("pipeline", "Classify one clip with the deployment pipeline", pipe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (auto& [sub, run] : commands) {
    if (!sub->parsed()) continue;
    apply_config(app, *sub, shared);
    return run();
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << '\n';
    return 2;
  } catch (const PairingViolationError& e) {
    std::cerr << "PairingViolation: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const CLI::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
