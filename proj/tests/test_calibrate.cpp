#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "m2m/calibrate.hpp"
#include "m2m/error.hpp"

using namespace m2m;
using namespace m2m::calibrate;

namespace {

AudioClip sine(double hz, double amp, double seconds) {
  AudioClip c;
  c.samples.resize(static_cast<std::size_t>(seconds * dsp::kSampleRate));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / dsp::kSampleRate));
  }
  return c;
}

AudioClip white(double seconds, std::uint64_t seed) {
  AudioClip c;
  c.samples.resize(static_cast<std::size_t>(seconds * dsp::kSampleRate));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& s : c.samples) s = static_cast<float>(n(rng));
  return c;
}

bool excited(double hz) { return hz >= 200 && hz <= 7500; }

}  // namespace

TEST(MeasurePsd, SilenceIsZero) {
  AudioClip c;
  c.samples.assign(8000, 0.0f);
  auto psd = measure_psd(c, {});
  ASSERT_EQ(psd.power.size(), 256u);
  for (double p : psd.power) EXPECT_EQ(p, 0.0);
  EXPECT_DOUBLE_EQ(psd.bin_hz, 31.25);
}

TEST(MeasurePsd, BinCentredSineAndScaling) {
  const double hz = 40 * 31.25;
  auto p1 = measure_psd(sine(hz, 0.2, 1.0), {});
  auto p2 = measure_psd(sine(hz, 0.4, 1.0), {});
  EXPECT_EQ(std::max_element(p1.power.begin(), p1.power.end()) - p1.power.begin(), 40);
  double total = 0;
  for (double p : p1.power) total += p;
  EXPECT_GT((p1.power[39] + p1.power[40] + p1.power[41]) / total, 0.99);
  EXPECT_NEAR(p2.power[40] / p1.power[40], 4.0, 1e-4);
}

TEST(MeasurePsd, WhiteNoiseIsFlat) {
  auto psd = measure_psd(white(10.0, 3), {});
  double mean = 0;
  for (int k = 2; k < 254; ++k) mean += psd.power[k];
  mean /= 252;
  for (int k = 2; k < 254; ++k) EXPECT_NEAR(10 * std::log10(psd.power[k] / mean), 0.0, 3.0) << "bin " << k;
}

TEST(MeasurePsd, TooShort) {
  EXPECT_THROW(measure_psd(sine(100, 0.1, 0.1), {}), InputTooShortError);
  EXPECT_NO_THROW(measure_psd(sine(100, 0.1, (512 + 7 * 256) / 16000.0), {}));
}

TEST(ComputeOffset, IdenticalRecordingsGiveUnity) {
  auto psd = measure_psd(white(2.0, 1), {});
  auto off = compute_offset(psd, psd);
  for (double g : off.gamma) EXPECT_DOUBLE_EQ(g, 1.0);
  EXPECT_FALSE(off.floor_applied);
}

TEST(ComputeOffset, HalfGainTestMicGivesTwo) {
  auto ref = micsim::find_profile("ref");
  micsim::MicProfile half{"half", micsim::flat_response({}, 0.5), micsim::kNoNoise, 1};
  auto off = sweep_offset(half, ref, {});
  for (std::size_t k = 0; k < off.gamma.size(); ++k) {
    if (excited(k * 31.25)) {
      EXPECT_NEAR(off.gamma[k], 2.0, 2e-3) << "bin " << k;
    }
  }
}

TEST(ComputeOffset, FloorAndErrors) {
  PsdEstimate a{{0.0, 1.0, 4.0}, 31.25}, b{{0.0, 4.0, 1e-12}, 31.25};
  auto off = compute_offset(a, b);
  EXPECT_EQ(off.gamma, (std::vector<double>{1.0, 2.0, 1.0}));
  EXPECT_EQ(off.floored, (std::vector<bool>{true, false, true}));
  EXPECT_TRUE(off.floor_applied);
  EXPECT_THROW(compute_offset(a, PsdEstimate{{1.0}, 31.25}), ConfigError);
}

// Noise-free LTI microphones: the sweep offset recovers the true gain ratio.
TEST(ComputeOffset, InvertsTrueGainRatio) {
  auto ref = micsim::find_profile("ref");
  for (const char* name : {"arrayA", "usbC"}) {
    auto mic = micsim::find_profile(name).without_noise();
    auto off = sweep_offset(mic, ref, {});
    for (std::size_t k = 0; k < off.gamma.size(); ++k) {
      if (!excited(k * 31.25)) continue;
      const double truth = 1.0 / mic.tf.gains[k];
      EXPECT_NEAR(off.gamma[k] / truth, 1.0, 0.01) << name << " bin " << k;
    }
  }
}

TEST(ComputeOffset, ForwardTimesBackwardIsOne) {
  auto a = measure_psd(micsim::apply_microphone(white(3.0, 4), micsim::find_profile("arrayA").without_noise()), {});
  auto b = measure_psd(white(3.0, 4), {});
  auto ab = compute_offset(a, b), ba = compute_offset(b, a);
  for (std::size_t k = 0; k < ab.gamma.size(); ++k) {
    if (ab.floored[k]) continue;
    EXPECT_NEAR(ab.gamma[k] * ba.gamma[k], 1.0, 1e-12);
  }
}

TEST(ApplyOffset, IdentityScalingAndLinearity) {
  dsp::Grid m = dsp::magnitude_stft(white(0.5, 5), {});
  CalibrationOffset one{std::vector<double>(256, 1.0), std::vector<bool>(256, false), false, 31.25};
  CalibrationOffset two = one;
  std::fill(two.gamma.begin(), two.gamma.end(), 2.0);
  EXPECT_EQ(apply_offset_linear(m, one).values, m.values);
  auto doubled = apply_offset_linear(m, two);
  for (std::size_t i = 0; i < m.values.size(); ++i) EXPECT_EQ(doubled.values[i], 2 * m.values[i]);

  CalibrationOffset ramp = one;
  for (int k = 0; k < 256; ++k) ramp.gamma[k] = 0.5 + k / 256.0;
  dsp::Grid n = dsp::magnitude_stft(white(0.5, 6), {}), mix = m;
  for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = 3 * m.values[i] + 0.5f * n.values[i];
  auto lhs = apply_offset_linear(mix, ramp);
  auto rm = apply_offset_linear(m, ramp), rn = apply_offset_linear(n, ramp);
  for (std::size_t i = 0; i < lhs.values.size(); ++i) {
    EXPECT_NEAR(lhs.values[i], 3 * rm.values[i] + 0.5f * rn.values[i], 1e-4 * (1 + std::abs(lhs.values[i])));
  }

  auto spec = apply_offset(m, one, {});
  EXPECT_EQ(spec.bins.rows, 256);
  CalibrationOffset short_off{{1.0, 1.0}, {false, false}, false, 31.25};
  EXPECT_THROW(apply_offset_linear(m, short_off), ShapeError);
}

TEST(OffsetFile, RoundTripAndValidation) {
  PsdEstimate a{{0.0, 1.0, 4.0}, 31.25}, b{{0.0, 4.0, 1.0}, 31.25};
  auto off = compute_offset(a, b);
  const auto dir = std::filesystem::temp_directory_path() / "m2m_cal_test";
  std::filesystem::create_directories(dir);
  save_offset(off, dir / "off.json");
  auto back = load_offset(dir / "off.json");
  EXPECT_EQ(back.gamma, off.gamma);
  EXPECT_EQ(back.floored, off.floored);
  EXPECT_EQ(back.floor_applied, off.floor_applied);
  EXPECT_EQ(back.bin_hz, off.bin_hz);
  std::ofstream(dir / "bad.json") << R"({"bin_hz": 31.25, "gamma": [1.0, -1.0], "floored": [false, false], "floor_applied": false})";
  EXPECT_THROW(load_offset(dir / "bad.json"), FormatError);
  std::ofstream(dir / "junk.json") << "{";
  EXPECT_THROW(load_offset(dir / "junk.json"), FormatError);
  EXPECT_THROW(load_offset(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
