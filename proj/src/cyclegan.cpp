#include "m2m/cyclegan/model.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "m2m/config_io.hpp"
#include "m2m/error.hpp"

namespace m2m::cyclegan {

using nn::Mode;
using nn::Tensor;

std::size_t PatchBank::count() const {
  const std::size_t per = static_cast<std::size_t>(size.freq) * size.time;
  return per == 0 ? 0 : data.size() / per;
}

Tensor<float> PatchBank::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t per = static_cast<std::size_t>(size.freq) * size.time;
  Tensor<float> out({static_cast<int>(indices.size()), 1, size.freq, size.time});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= count()) throw ShapeError("patch index out of range");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per, out.data() + i * per);
  }
  return out;
}

void PatchBank::append(const dsp::Grid& patch) {
  if (patch.rows != size.freq || patch.cols != size.time) throw ShapeError("patch size does not match the bank");
  data.insert(data.end(), patch.values.begin(), patch.values.end());
}

PatchBank make_patch_bank(const micsim::DomainDataset& domain, const dsp::StftConfig& cfg, dsp::PatchSize size,
                          int stride) {
  if (stride <= 0) throw ConfigError("patch stride must be positive");
  PatchBank bank;
  bank.domain_id = domain.domain_id;
  bank.size = size;
  for (std::size_t i = 0; i < domain.clips.size(); ++i) {
    const auto& clip = domain.clips[i];
    if (static_cast<int>(clip.size()) < cfg.window_length()) continue;
    std::vector<dsp::Spectrogram> patches;
    try {
      patches = dsp::extract_patches(dsp::stft_log_spectrogram(clip, cfg), size, stride);
    } catch (const InputTooShortError&) {
      continue;
    }
    for (const auto& p : patches) bank.append(p.bins);
    bank.clip_ids.push_back(i < domain.clip_ids.size() ? domain.clip_ids[i] : std::to_string(i));
  }
  return bank;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (BatchNorm needs batch statistics)");
  if (epochs < 0 || total_steps < 0) throw ConfigError("epochs and total_steps must be non-negative");
  if (width < 1) throw ConfigError("width must be positive");
  if (!(weights.alpha > 0)) throw ConfigError("alpha must be positive");
  if (weights.alpha < 0 || weights.beta < 0 || weights.gamma < 0 || paired_weight < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(adam.lr > 0)) throw ConfigError("learning rate must be positive");
}

namespace {

// Seeds follow the role a network plays between two named domains, so
// training on (B, A) mirrors training on (A, B) exactly.
std::uint64_t role_seed(std::uint64_t seed, const std::string& role) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : role) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace

CycleGanModel::CycleGanModel(ModelMeta m, std::uint64_t seed)
    : g_ab("g_ab", m.width), g_ba("g_ba", m.width), d_a("d_a", m.width), d_b("d_b", m.width), meta(std::move(m)) {
  const std::string& a = meta.source_domain;
  const std::string& b = meta.target_domain;
  g_ab.init(role_seed(seed, "G:" + a + ">" + b));
  g_ba.init(role_seed(seed, "G:" + b + ">" + a));
  d_a.init(role_seed(seed, "D:" + a));
  d_b.init(role_seed(seed, "D:" + b));
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out.precision(8);
  out << "epoch,L_adv_ab,L_adv_ba,L_cycle,L_id,L_D_a,L_D_b,L_paired,L_G_total,steps\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.adv_ab << ',' << e.adv_ba << ',' << e.cycle << ',' << e.id << ',' << e.d_a << ','
        << e.d_b << ',' << e.paired << ',' << e.gen_total << ',' << e.steps << '\n';
  }
  return out.str();
}

namespace {

Tensor<float> scaled(const Tensor<float>& t, double s) {
  Tensor<float> out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(out[i] * s);
  return out;
}

double discriminator_step(Discriminator<float>& d, const Tensor<float>& real, const Tensor<float>& fake) {
  Discriminator<float>::Tape tr, tf;
  Tensor<float> sr = d.forward(real, Mode::Train, &tr);
  Tensor<float> sf = d.forward(fake, Mode::Train, &tf);
  auto loss = loss_discriminator(sf, sr);
  d.backward(tr, loss.grad_real);
  d.backward(tf, loss.grad_fake);
  return loss.value;
}

void check_pairing(const PatchBank& a, const PatchBank& b, TrainMode mode) {
  if (mode == TrainMode::Unpaired) {
    std::set<std::string> ids(a.clip_ids.begin(), a.clip_ids.end());
    for (const auto& id : b.clip_ids) {
      if (ids.count(id)) throw PairingViolationError("unpaired training data shares clip '" + id + "' across domains");
    }
  } else if (a.clip_ids != b.clip_ids || a.count() != b.count()) {
    throw PairingViolationError("paired training needs the same clips, in the same order, in both domains");
  }
}

struct StepLosses {
  double adv_ab = 0, adv_ba = 0, cycle = 0, id = 0, d_a = 0, d_b = 0, paired = 0;
};

class Trainer {
 public:
  Trainer(CycleGanModel& m, const TrainConfig& cfg) : m_(m), cfg_(cfg) {
    auto gp = m.g_ab.params(), gq = m.g_ba.params();
    gp.insert(gp.end(), gq.begin(), gq.end());
    auto dp = m.d_a.params(), dq = m.d_b.params();
    dp.insert(dp.end(), dq.begin(), dq.end());
    g_opt_ = nn::Adam<float>(gp, cfg.adam);
    d_opt_ = nn::Adam<float>(dp, cfg.adam);
  }

  StepLosses step(const Tensor<float>& xa, const Tensor<float>& xb) {
    const auto& w = cfg_.weights;
    const bool paired = cfg_.mode == TrainMode::Paired;
    StepLosses out;

    Generator<float>::Tape t_ab, t_ba;
    const Tensor<float> fake_b = m_.g_ab.forward(xa, Mode::Train, &t_ab);
    const Tensor<float> fake_a = m_.g_ba.forward(xb, Mode::Train, &t_ba);

    // Discriminators first; the generators are untouched by this update, so
    // the same fakes and tapes serve the generator step below.
    d_opt_.zero_grad();
    out.d_b = discriminator_step(m_.d_b, xb, fake_b);
    out.d_a = discriminator_step(m_.d_a, xa, fake_a);
    d_opt_.step();

    g_opt_.zero_grad();
    Discriminator<float>::Tape ta, tb;
    auto adv_ab = loss_adv_generator(m_.d_b.forward(fake_b, Mode::Train, &tb));
    auto adv_ba = loss_adv_generator(m_.d_a.forward(fake_a, Mode::Train, &ta));
    out.adv_ab = adv_ab.value;
    out.adv_ba = adv_ba.value;
    Tensor<float> g_fake_b = m_.d_b.backward(tb, scaled(adv_ab.grad, w.alpha));
    Tensor<float> g_fake_a = m_.d_a.backward(ta, scaled(adv_ba.grad, w.alpha));

    if (!paired && w.beta > 0) {
      Generator<float>::Tape t_rec_a, t_rec_b;
      auto cyc_a = loss_cycle(xa, m_.g_ba.forward(fake_b, Mode::Train, &t_rec_a));
      auto cyc_b = loss_cycle(xb, m_.g_ab.forward(fake_a, Mode::Train, &t_rec_b));
      out.cycle = cyc_a.value + cyc_b.value;
      nn::add_inplace(g_fake_b, m_.g_ba.backward(t_rec_a, scaled(cyc_a.grad, w.beta)));
      nn::add_inplace(g_fake_a, m_.g_ab.backward(t_rec_b, scaled(cyc_b.grad, w.beta)));
    }
    if (w.gamma > 0) {
      Generator<float>::Tape t_id_b, t_id_a;
      auto id_b = loss_identity(xb, m_.g_ab.forward(xb, Mode::Train, &t_id_b));
      auto id_a = loss_identity(xa, m_.g_ba.forward(xa, Mode::Train, &t_id_a));
      out.id = id_b.value + id_a.value;
      m_.g_ab.backward(t_id_b, scaled(id_b.grad, w.gamma));
      m_.g_ba.backward(t_id_a, scaled(id_a.grad, w.gamma));
    }
    if (paired) {
      auto p_b = nn::l1_mean(fake_b, xb);
      auto p_a = nn::l1_mean(fake_a, xa);
      out.paired = p_b.value + p_a.value;
      nn::add_inplace(g_fake_b, scaled(p_b.grad, cfg_.paired_weight));
      nn::add_inplace(g_fake_a, scaled(p_a.grad, cfg_.paired_weight));
    }
    m_.g_ab.backward(t_ab, g_fake_b);
    m_.g_ba.backward(t_ba, g_fake_a);
    g_opt_.step();
    return out;
  }

 private:
  CycleGanModel& m_;
  const TrainConfig& cfg_;
  nn::Adam<float> g_opt_, d_opt_;
};

}  // namespace

TrainResult train(const PatchBank& a, const PatchBank& b, const TrainConfig& cfg, ModelMeta meta,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (a.size.freq != b.size.freq || a.size.time != b.size.time) throw ConfigError("domains use different patch sizes");
  check_pairing(a, b, cfg.mode);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  if (a.count() < bs || b.count() < bs) {
    throw InsufficientDataError("each domain needs at least batch_size (" + std::to_string(bs) + ") patches; got " +
                                std::to_string(a.count()) + " and " + std::to_string(b.count()));
  }
  meta.patch = a.size;
  meta.width = cfg.width;
  if (meta.source_domain.empty()) meta.source_domain = a.domain_id;
  if (meta.target_domain.empty()) meta.target_domain = b.domain_id;
  TrainResult result{CycleGanModel(meta, cfg.seed), {}};
  Trainer trainer(result.model, cfg);

  const bool paired = cfg.mode == TrainMode::Paired;
  const long per_epoch = static_cast<long>(std::min(a.count(), b.count()) / bs);
  long remaining = cfg.total_steps > 0 ? cfg.total_steps : per_epoch * cfg.epochs;
  std::mt19937_64 rng_a(role_seed(cfg.seed, "S:" + meta.source_domain));
  std::mt19937_64 rng_b(role_seed(cfg.seed, "S:" + meta.target_domain));
  std::vector<std::size_t> perm_a(a.count()), perm_b(b.count());
  for (int epoch = 1; remaining > 0; ++epoch) {
    std::iota(perm_a.begin(), perm_a.end(), 0);
    std::shuffle(perm_a.begin(), perm_a.end(), rng_a);
    if (paired) {
      perm_b = perm_a;
    } else {
      std::iota(perm_b.begin(), perm_b.end(), 0);
      std::shuffle(perm_b.begin(), perm_b.end(), rng_b);
    }
    const long steps = std::min(per_epoch, remaining);
    EpochLog log;
    log.epoch = epoch;
    log.steps = steps;
    for (long s = 0; s < steps; ++s) {
      const auto off = static_cast<std::ptrdiff_t>(s * bs);
      std::vector<std::size_t> ia(perm_a.begin() + off, perm_a.begin() + off + static_cast<std::ptrdiff_t>(bs));
      std::vector<std::size_t> ib(perm_b.begin() + off, perm_b.begin() + off + static_cast<std::ptrdiff_t>(bs));
      StepLosses l = trainer.step(a.batch(ia), b.batch(ib));
      log.adv_ab += l.adv_ab;
      log.adv_ba += l.adv_ba;
      log.cycle += l.cycle;
      log.id += l.id;
      log.d_a += l.d_a;
      log.d_b += l.d_b;
      log.paired += l.paired;
    }
    for (double* v : {&log.adv_ab, &log.adv_ba, &log.cycle, &log.id, &log.d_a, &log.d_b, &log.paired}) {
      *v /= static_cast<double>(steps);
    }
    const auto& w = cfg.weights;
    log.gen_total = w.alpha * (log.adv_ab + log.adv_ba) + (paired ? 0.0 : w.beta) * log.cycle + w.gamma * log.id +
                    (paired ? cfg.paired_weight * log.paired : 0.0);
    remaining -= steps;
    result.log.push_back(log);
    if (on_epoch && !on_epoch(log, result.model)) break;
  }
  return result;
}

dsp::Spectrogram translate(const Generator<float>& g, const dsp::PatchSize& patch, const dsp::Spectrogram& spec) {
  const int frames = spec.frames();
  auto patches = dsp::extract_patches(spec, patch, patch.time);
  const std::size_t per = static_cast<std::size_t>(patch.freq) * patch.time;
  constexpr std::size_t kChunk = 16;
  std::vector<dsp::Grid> outs;
  outs.reserve(patches.size());
  for (std::size_t begin = 0; begin < patches.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, patches.size() - begin);
    Tensor<float> x({static_cast<int>(n), 1, patch.freq, patch.time});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(patches[begin + i].bins.values.begin(), per, x.data() + i * per);
    const Tensor<float> y = g.infer(x);
    for (std::size_t i = 0; i < n; ++i) {
      dsp::Grid grid(patch.freq, patch.time);
      std::copy_n(y.data() + i * per, per, grid.values.begin());
      outs.push_back(std::move(grid));
    }
  }
  const dsp::Grid low = dsp::reassemble_patches(outs, frames, patch.time);
  dsp::Spectrogram out = spec;
  for (int r = 0; r < patch.freq; ++r) {
    for (int c = 0; c < frames; ++c) out.bins.at(r, c) = low.at(r, c);
  }
  return out;
}

dsp::Spectrogram translate(const CycleGanModel& model, const dsp::Spectrogram& spec, Direction dir) {
  return translate(dir == Direction::AtoB ? model.g_ab : model.g_ba, model.meta.patch, spec);
}

namespace {

json meta_to_json(const ModelMeta& m) {
  return {{"source_domain", m.source_domain},
          {"target_domain", m.target_domain},
          {"stft", stft_to_json(m.stft)},
          {"patch", patch_to_json(m.patch)},
          {"width", m.width}};
}

ModelMeta meta_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelMeta m;
    m.source_domain = j.at("source_domain").get<std::string>();
    m.target_domain = j.at("target_domain").get<std::string>();
    m.stft = stft_from_json(j.at("stft"));
    m.patch = patch_from_json(j.at("patch"));
    m.width = j.at("width").get<int>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  }
}

}  // namespace

void save_model(const CycleGanModel& model, const std::filesystem::path& path) {
  auto& m = const_cast<CycleGanModel&>(model);  // for_each_* hand out mutable refs; nothing is modified
  nn::Checkpoint ckpt{"cyclegan", meta_to_json(model.meta).dump(), {}};
  store_net(m.g_ab, ckpt);
  store_net(m.g_ba, ckpt);
  store_net(m.d_a, ckpt);
  store_net(m.d_b, ckpt);
  nn::save_checkpoint(ckpt, path);
}

CycleGanModel load_model(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.kind != "cyclegan") throw FormatError(path.string() + " is a '" + ckpt.kind + "' checkpoint, not cyclegan");
  CycleGanModel m(meta_from_json(ckpt.metadata), 0);
  restore_net(m.g_ab, ckpt);
  restore_net(m.g_ba, ckpt);
  restore_net(m.d_a, ckpt);
  restore_net(m.d_b, ckpt);
  return m;
}

void export_translator(const CycleGanModel& model, const std::filesystem::path& path) {
  auto& m = const_cast<CycleGanModel&>(model);
  nn::Checkpoint ckpt{"cyclegan-export", meta_to_json(model.meta).dump(), {}};
  store_net(m.g_ab, ckpt);
  nn::save_checkpoint(ckpt, path);
}

Translator load_translator(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.kind != "cyclegan-export" && ckpt.kind != "cyclegan") {
    throw FormatError(path.string() + " is a '" + ckpt.kind + "' checkpoint, not a translator");
  }
  Translator t;
  t.meta = meta_from_json(ckpt.metadata);
  t.g = Generator<float>("g_ab", t.meta.width);
  restore_net(t.g, ckpt);
  return t;
}

}  // namespace m2m::cyclegan
