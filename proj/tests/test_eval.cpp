#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "m2m/error.hpp"
#include "m2m/eval/evaluate.hpp"
#include "m2m/nn/gradcheck.hpp"

using namespace m2m;
using namespace m2m::eval;

namespace {

dsp::Grid random_grid(int rows, int cols, std::uint64_t seed) {
  dsp::Grid g(rows, cols);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : g.values) v = u(rng);
  return g;
}

// Brute-force MSE-based PSNR kept apart from the implementation.
double psnr_oracle(const dsp::Grid& a, const dsp::Grid& b) {
  long double acc = 0;
  for (int r = 0; r < a.rows; ++r) {
    for (int c = 0; c < a.cols; ++c) {
      const long double d = static_cast<long double>(a.at(r, c)) - b.at(r, c);
      acc += d * d;
    }
  }
  const double mse = static_cast<double>(acc / (a.rows * a.cols));
  return mse == 0 ? 100.0 : 10.0 * std::log10(4.0 / mse);
}

std::vector<LabeledClip> keyword_set(int per_class, std::uint64_t seed, const std::string& prefix) {
  return render(synth_keyword_clips(per_class, seed, prefix), micsim::find_profile("ref"));
}

KeywordTrainConfig quick(int epochs = 12) {
  KeywordTrainConfig c;
  c.epochs = epochs;
  c.seed = 5;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("m2m_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Psnr, CapAndDirectFormula) {
  const auto a = random_grid(8, 8, 1);
  EXPECT_EQ(psnr(a, a), 100.0);
  dsp::Grid b = a;
  for (auto& v : b.values) v += 0.2f;  // MSE 0.04
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, random_grid(8, 9, 2)), ShapeError);
}

TEST(Psnr, MatchesOracleSymmetricAndMonotone) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_grid(16, 12, 2 * s + 1), b = random_grid(16, 12, 2 * s + 2);
    EXPECT_NEAR(psnr(a, b), psnr_oracle(a, b), 1e-9);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    // Moving b toward a shrinks the MSE and must raise the PSNR.
    dsp::Grid closer = b;
    for (std::size_t i = 0; i < closer.values.size(); ++i) closer.values[i] = 0.5f * (a.values[i] + b.values[i]);
    EXPECT_GT(psnr(a, closer), psnr(a, b));
  }
}

TEST(Recovery, ReferenceValuesAndEdges) {
  EXPECT_NEAR(recovery(0.788, 0.664, 0.7551).raw, 0.735, 5e-4);
  EXPECT_EQ(recovery(0.9, 0.5, 0.5).raw, 0.0);
  EXPECT_EQ(recovery(0.9, 0.5, 0.9).raw, 1.0);
  const auto over = recovery(0.8, 0.6, 0.9);
  EXPECT_NEAR(over.raw, 1.5, 1e-12);
  EXPECT_EQ(over.clamped, 1.0);
  EXPECT_NEAR(recovery(0.8, 0.6, 0.5).raw, -0.5, 1e-12);
  EXPECT_EQ(recovery(0.8, 0.6, 0.5).clamped, 0.0);
  EXPECT_THROW(recovery(0.6, 0.6, 0.7), UndefinedRecoveryError);
  EXPECT_THROW(recovery(0.5, 0.6, 0.7), UndefinedRecoveryError);
}

TEST(Recovery, InvariantUnderAffineRescaling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double lo = u(rng) * 0.5, hi = lo + 0.01 + u(rng) * 0.5, t = u(rng);
    const double scale = 0.1 + 3 * u(rng), shift = u(rng) - 0.5;
    EXPECT_NEAR(recovery(hi, lo, t).raw, recovery(scale * hi + shift, scale * lo + shift, scale * t + shift).raw,
                1e-9);
  }
}

TEST(Pipelines, NamesRoundTrip) {
  for (Pipeline p : {Pipeline::Unmodified, Pipeline::Calibrated, Pipeline::Mic2Mic, Pipeline::PairedGan}) {
    EXPECT_EQ(parse_pipeline(to_string(p)), p);
  }
  EXPECT_THROW(parse_pipeline("mic3mic"), ConfigError);
}

TEST(Corpus, KeywordClipsAreBalancedAndSeeded) {
  const auto a = synth_keyword_clips(3, 4, "x");
  ASSERT_EQ(a.size(), 3u * keyword_classes().size());
  std::vector<int> counts(keyword_classes().size(), 0);
  std::set<std::string> ids;
  for (const auto& c : a) {
    ++counts[c.label];
    ids.insert(c.id);
    EXPECT_EQ(c.clip.size(), 16000u);
    EXPECT_NO_THROW(c.clip.validate());
  }
  EXPECT_EQ(ids.size(), a.size());
  for (int n : counts) EXPECT_EQ(n, 3);
  const auto b = synth_keyword_clips(3, 4, "x");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].clip.samples, b[i].clip.samples);
  EXPECT_NE(synth_keyword_clips(1, 5, "x")[0].clip.samples, a[0].clip.samples);
  EXPECT_EQ(keyword_classes()[unknown_class()], "Unknown");
}

TEST(Corpus, RestCorpusDuration) {
  const auto rest = synth_rest_corpus(1.0, 4.0, 2);
  ASSERT_EQ(rest.size(), 15u);
  for (const auto& c : rest) EXPECT_DOUBLE_EQ(c.clip.duration_s(), 4.0);
  EXPECT_THROW(synth_rest_corpus(1.0, 0.5, 2), ConfigError);
}

TEST(Corpus, KeywordDirectoryLayout) {
  const auto dir = scratch("kwdir");
  const auto clips = synth_keyword_clips(1, 6, "d");
  write_keyword_dir(clips, dir);
  std::filesystem::create_directories(dir / "_background_noise_");
  dsp::write_wav(clips[0].clip, dir / "_background_noise_" / "hum.wav");
  std::filesystem::create_directories(dir / "bed");
  dsp::write_wav(clips[0].clip, dir / "bed" / "b0.wav");
  const auto back = load_keyword_dir(dir);
  ASSERT_EQ(back.size(), clips.size() + 1);
  int unknown = 0;
  for (const auto& c : back) {
    const std::string folder = c.id.substr(0, c.id.find('/'));
    EXPECT_EQ(keyword_classes()[c.label], folder == "bed" ? "Unknown" : folder);
    unknown += c.label == unknown_class();
  }
  EXPECT_EQ(unknown, 2);
  EXPECT_THROW(load_keyword_dir(dir / "missing"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(KeywordNet, GradientsMatchFiniteDifferences) {
  KeywordNet<double> net(5);
  net.init(3);
  nn::Tensor<double> x({2, 1, 9, 24});
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : x.values()) v = g(rng);
  const std::vector<int> labels = {1, 3};
  std::vector<nn::GradProbe<double>> probes;
  net.for_each_param([&](nn::Param<double>& p) { probes.push_back({p.name, &p.value, &p.grad}); });
  auto loss = [&] { return nn::softmax_cross_entropy(net.forward(x), labels).value; };
  auto grads = [&] {
    net.for_each_param([](nn::Param<double>& p) { p.zero_grad(); });
    typename KeywordNet<double>::Tape tape;
    const auto logits = net.forward(x, &tape);
    net.backward(tape, nn::softmax_cross_entropy(logits, labels).grad);
  };
  EXPECT_LT(nn::gradient_check<double>(loss, grads, probes).max_rel_error, 1e-3);
}

TEST(KeywordModel, SameDomainAccuracyAndProbabilities) {
  const auto train = keyword_set(30, 1, "tr");
  const auto test = keyword_set(15, 2, "te");
  const auto model = train_keyword(train, {"ref"}, quick());
  const auto report = evaluate(model, test, Pipeline::Unmodified, {}, "ref", "ref");
  EXPECT_GE(report.accuracy, 0.90);
  std::vector<dsp::Grid> feats;
  for (int i = 0; i < 10; ++i) feats.push_back(dsp::mfcc(test[i].clip, model.stft));
  for (const auto& p : model.probabilities(feats)) {
    ASSERT_EQ(p.size(), keyword_classes().size());
    double s = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(KeywordModel, UntrainedIsNearChance) {
  const auto data = keyword_set(10, 3, "c");
  const auto model = train_keyword(data, {"ref"}, quick(0));
  const double acc = evaluate(model, data, Pipeline::Unmodified, {}, "ref", "ref").accuracy;
  EXPECT_NEAR(acc, 1.0 / keyword_classes().size(), 0.1);
}

TEST(KeywordModel, DeterministicAndRoundTrips) {
  const auto data = keyword_set(4, 7, "d");
  const auto dir = scratch("kwmodel");
  save_keyword(train_keyword(data, {"ref"}, quick(2)), dir / "a.ckpt");
  save_keyword(train_keyword(data, {"ref"}, quick(2)), dir / "b.ckpt");
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(bytes(dir / "a.ckpt"), bytes(dir / "b.ckpt"));

  const auto model = train_keyword(data, {"ref", "arrayA"}, quick(2));
  save_keyword(model, dir / "m.ckpt");
  const auto back = load_keyword(dir / "m.ckpt");
  EXPECT_EQ(back.classes, model.classes);
  EXPECT_EQ(back.training_mics, (std::vector<std::string>{"arrayA", "ref"}));
  EXPECT_EQ(back.stft.hash(), model.stft.hash());
  std::vector<dsp::Grid> feats;
  for (const auto& c : data) feats.push_back(dsp::mfcc(c.clip, model.stft));
  EXPECT_EQ(back.probabilities(feats), model.probabilities(feats));

  cyclegan::CycleGanModel gan({"a", "b", {}, {64, 64}, 4}, 1);
  cyclegan::export_translator(gan, dir / "gan.ckpt");
  EXPECT_THROW(load_keyword(dir / "gan.ckpt"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(KeywordModel, DataErrors) {
  auto data = keyword_set(2, 8, "e");
  std::erase_if(data, [](const LabeledClip& c) { return c.label == 4; });
  EXPECT_THROW(train_keyword(data, {"ref"}, quick(1)), InsufficientDataError);
  auto longer = keyword_set(1, 9, "f");
  longer[0].clip.samples.resize(20000, 0.0f);
  EXPECT_THROW(train_keyword(longer, {"ref"}, quick(1)), DataError);
  EXPECT_THROW(train_keyword(keyword_set(1, 9, "g"), {}, quick(1)), ConfigError);
}

TEST(Evaluate, PureRepeatableAndArtifactChecks) {
  const auto data = keyword_set(3, 10, "p");
  const auto model = train_keyword(data, {"ref"}, quick(3));
  const auto r1 = evaluate(model, data, Pipeline::Unmodified, {}, "ref", "ref", &data);
  const auto r2 = evaluate(model, data, Pipeline::Unmodified, {}, "ref", "ref", &data);
  EXPECT_EQ(report_csv_row(r1), report_csv_row(r2));
  ASSERT_TRUE(r1.psnr_mean.has_value());
  EXPECT_EQ(*r1.psnr_mean, kPsnrCap);
  EXPECT_EQ(r1.clips, data.size());

  EXPECT_THROW(evaluate(model, data, Pipeline::Mic2Mic, {}, "ref", "lofi"), ConfigError);
  EXPECT_THROW(evaluate(model, data, Pipeline::PairedGan, {}, "ref", "lofi"), ConfigError);
  EXPECT_THROW(evaluate(model, data, Pipeline::Calibrated, {}, "ref", "lofi"), ConfigError);

  // A unity offset leaves the features untouched.
  calibrate::CalibrationOffset unity{std::vector<double>(256, 1.0), std::vector<bool>(256, false), false, 31.25};
  PipelineArtifacts cal;
  cal.offset = &unity;
  EXPECT_EQ(evaluate(model, data, Pipeline::Calibrated, cal, "ref", "ref").accuracy, r1.accuracy);

  cyclegan::Translator t;
  t.meta.stft.fft_size = 1024;
  PipelineArtifacts gan;
  gan.translator = &t;
  EXPECT_THROW(evaluate(model, data, Pipeline::Mic2Mic, gan, "ref", "lofi"), ContractError);

  const auto json_row = report_to_json(r1);
  EXPECT_EQ(json_row["pipeline"], "unmodified");
  EXPECT_TRUE(json_row["recovery"].is_null());
}

TEST(Evaluate, AttachRecovery) {
  EvalReport upper, unmod, treated;
  upper.accuracy = 0.9;
  unmod.accuracy = 0.5;
  treated.accuracy = 0.8;
  attach_recovery(treated, upper, unmod);
  EXPECT_NEAR(*treated.recovery, 0.75, 1e-12);
  unmod.accuracy = 0.95;
  attach_recovery(treated, upper, unmod);
  EXPECT_FALSE(treated.recovery.has_value());
}

TEST(DataAmountSweep, ZeroBudgetAndErrors) {
  const auto test_src = synth_keyword_clips(2, 11, "s");
  const auto model = train_keyword(render(test_src, micsim::find_profile("ref")), {"ref"}, quick(2));
  SweepSetup setup;
  setup.pool = synth_rest_corpus(1.0, 4.0, 3);  // 30 s per microphone
  setup.source_mic = micsim::find_profile("lofi");
  setup.target_mic = micsim::find_profile("ref");
  setup.model = &model;
  setup.test = render(test_src, setup.source_mic);
  setup.train.width = 4;
  setup.train.total_steps = 2;
  setup.train.batch_size = 2;

  const auto zero = data_amount_sweep({0.0}, setup);
  ASSERT_EQ(zero.size(), 1u);
  EXPECT_EQ(zero[0].accuracy, evaluate(model, setup.test, Pipeline::Unmodified, {}, "ref", "lofi").accuracy);

  EXPECT_THROW(data_amount_sweep({0.2, 0.1}, setup), ConfigError);
  EXPECT_THROW(data_amount_sweep({0.1, 0.1}, setup), ConfigError);
  EXPECT_THROW(data_amount_sweep({0.1, 2.0}, setup), InsufficientDataError);

  int trained = 0;
  const auto curve = data_amount_sweep({0.0, 0.2}, setup, [&](double m, const cyclegan::TrainResult& r) {
    EXPECT_EQ(m, 0.2);
    long steps = 0;
    for (const auto& e : r.log) steps += e.steps;
    EXPECT_EQ(steps, 2);
    ++trained;
  });
  EXPECT_EQ(trained, 1);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[1].clips_per_domain, 3u);
  EXPECT_GE(curve[1].accuracy, 0.0);
  EXPECT_NE(sweep_csv(curve).find("minutes,accuracy"), std::string::npos);
}
