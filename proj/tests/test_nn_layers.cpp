#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "m2m/cyclegan/networks.hpp"
#include "m2m/error.hpp"
#include "m2m/nn/adam.hpp"
#include "m2m/nn/gradcheck.hpp"
#include "m2m/nn/layers.hpp"
#include "m2m/nn/losses.hpp"

using namespace m2m;
using namespace m2m::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<T> t(s);
  std::mt19937_64 rng(seed);
  fill_uniform(t, lo, hi, rng);
  return t;
}

// Independent direct-loop cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, o, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int oc = 0; oc < o; ++oc)
      for (int r = 0; r < oh; ++r)
        for (int q = 0; q < ow; ++q) {
          double acc = b ? (*b)[oc] : 0.0;
          for (int ic = 0; ic < c; ++ic)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int yy = r * stride - pad + u, xx = q * stride - pad + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += x.at(i, ic, yy, xx) * w.at(oc, ic, u, v);
              }
          y.at(i, oc, r, q) = acc;
        }
  return y;
}

}  // namespace

TEST(Conv2d, IdentityCentreKernel) {
  Conv2d<double> conv("c", {1, 1, 3, 1, 1, true});
  conv.weight().value.fill(0.0);
  conv.weight().value.at(0, 0, 1, 1) = 1.0;
  auto x = random_tensor<double>({1, 1, 3, 3}, 1);
  EXPECT_EQ(conv.forward(x), x);
}

TEST(Conv2d, HandSum) {
  Conv2d<double> conv("c", {1, 1, 2, 1, 0, true});
  conv.weight().value.fill(1.0);
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = conv.forward(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 10.0);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  Conv2d<double> conv("c", {2, 3, 3, 1, 1, true});
  conv.weight().value.fill(0.0);
  conv.bias().value = Tensor<double>({3}, {0.5, -1.0, 2.0});
  auto y = conv.forward(random_tensor<double>({2, 2, 4, 4}, 2));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(y.at(n, c, 2, 3), conv.bias().value[c]);
}

TEST(Conv2d, MatchesNaiveLoopsAndShapeFormula) {
  for (auto [k, s, p] : {std::tuple{4, 2, 1}, std::tuple{3, 1, 1}, std::tuple{3, 2, 0}, std::tuple{5, 3, 2}}) {
    Conv2d<double> conv("c", {3, 4, k, s, p, true});
    std::mt19937_64 rng(3);
    conv.init(rng, 0.5);
    fill_uniform(conv.bias().value, -1, 1, rng);
    auto x = random_tensor<double>({2, 3, 9, 7}, 4);
    auto y = conv.forward(x);
    auto ref = naive_conv(x, conv.weight().value, &conv.bias().value, s, p);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_EQ(y.dim(2), (9 + 2 * p - k) / s + 1);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ShapeErrors) {
  Conv2d<float> conv("c", {3, 4, 3, 1, 1, true});
  EXPECT_THROW(conv.forward(Tensor<float>({1, 2, 5, 5})), ShapeError);
  Conv2d<float> big("c", {1, 1, 7, 1, 0, true});
  EXPECT_THROW(big.forward(Tensor<float>({1, 1, 5, 5})), ShapeError);
}

TEST(TransposeConv2d, ScalarCase) {
  TransposeConv2d<double> t("t", {1, 1, 1, 1, 0, true});
  t.weight().value.fill(3.0);
  auto y = t.forward(Tensor<double>({1, 1, 1, 1}, {2.0}));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y[0], 6.0);
}

TEST(TransposeConv2d, Stride2DoublesSpatialDims) {
  TransposeConv2d<float> t("t", {4, 2, 4, 2, 1, true});
  auto y = t.forward(Tensor<float>({1, 4, 8, 8}));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 16, 16}));
}

// <conv(x), y> == <x, conv_transpose(y)> with shared weights (no bias).
TEST(TransposeConv2d, AdjointOfConv) {
  // Sizes chosen so the transpose maps back onto the conv input size.
  for (auto [k, s, p, hw] : {std::tuple{4, 2, 1, 8}, std::tuple{3, 1, 1, 8}, std::tuple{3, 2, 1, 9}, std::tuple{1, 1, 0, 5}}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Conv2d<double> conv("c", {3, 5, k, s, p, false});
      std::mt19937_64 rng(seed);
      conv.init(rng, 0.3);
      TransposeConv2d<double> tconv("t", {5, 3, k, s, p, false});
      tconv.weight().value = conv.weight().value;  // [out,in,k,k] of conv is [in,out,k,k] of its transpose
      auto x = random_tensor<double>({2, 3, hw, hw}, seed + 10);
      auto cx = conv.forward(x);
      auto y = random_tensor<double>(cx.shape(), seed + 20);
      auto ty = tconv.forward(y);
      ASSERT_EQ(ty.shape(), x.shape());
      const double lhs = dot(cx, y), rhs = dot(x, ty);
      EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST(TransposeConv2d, ForwardEqualsConvInputGradient) {
  Conv2d<double> conv("c", {2, 3, 4, 2, 1, false});
  std::mt19937_64 rng(1);
  conv.init(rng, 0.3);
  auto x = random_tensor<double>({1, 2, 8, 8}, 2);
  ConvCache<double> cache;
  auto y = conv.forward(x, &cache);
  auto gy = random_tensor<double>(y.shape(), 3);
  auto gx = conv.backward(cache, gy);
  TransposeConv2d<double> t("t", {3, 2, 4, 2, 1, false});
  t.weight().value = conv.weight().value;
  auto ty = t.forward(gy);
  for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_NEAR(gx[i], ty[i], 1e-12);
}

TEST(BatchNorm, TrainNormalizesPerChannel) {
  BatchNorm2d<double> bn("bn", 3);
  auto x = random_tensor<double>({4, 3, 5, 5}, 1, -3, 7);
  auto y = bn.forward(x, Mode::Train);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    int count = 0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          m += y.at(n, c, h, w);
          ++count;
        }
    m /= count;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) v += std::pow(y.at(n, c, h, w) - m, 2);
    v /= count;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-5 * 10);  // eps shrinks variance slightly
  }
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  BatchNorm2d<double> bn("bn", 2);
  auto x = random_tensor<double>({1, 2, 3, 3}, 2);
  auto y = bn.forward(x, Mode::Eval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ConstantChannelGivesShift) {
  BatchNorm2d<double> bn("bn", 1);
  bn.shift().value.fill(0.25);
  Tensor<double> x({3, 1, 2, 2}, 4.0);
  auto y = bn.forward(x, Mode::Train);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(BatchNorm, RunningStatsMomentum) {
  BatchNorm2d<double> bn("bn", 1);
  Tensor<double> x({2, 1, 1, 2}, {1.0, 3.0, 5.0, 7.0});
  bn.forward(x, Mode::Train);
  // batch mean 4, unbiased variance 20/3
  EXPECT_NEAR(bn.running_mean()[0], 0.1 * 4.0, 1e-12);
  EXPECT_NEAR(bn.running_var()[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-12);
}

TEST(BatchNorm, BatchOfOneInTrainThrows) {
  BatchNorm2d<float> bn("bn", 2);
  EXPECT_THROW(bn.forward(Tensor<float>({1, 2, 4, 4}), Mode::Train), BatchTooSmallError);
  EXPECT_NO_THROW(bn.forward(Tensor<float>({1, 2, 4, 4}), Mode::Eval));
}

TEST(Activations, Values) {
  Tensor<double> x({3}, {-1.0, 0.0, 2.0});
  auto r = relu(x);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[2], 2.0);
  EXPECT_DOUBLE_EQ(leaky_relu(x)[0], -0.2);
  auto g = relu_backward(x, Tensor<double>({3}, 1.0));
  EXPECT_EQ(g[1], 0.0);  // subgradient 0 at the kink
  auto big = tanh(Tensor<float>({2}, {-30.0f, 30.0f}));
  EXPECT_GE(big[0], -1.0f);
  EXPECT_LE(big[1], 1.0f);
  auto t = tanh(random_tensor<double>({100}, 5, -5, 5));
  for (double v : t.values()) EXPECT_LT(std::abs(v), 1.0);
}

TEST(Tensor, NonFiniteDetected) {
  Tensor<float> t({2}, {1.0f, NAN});
  EXPECT_THROW(require_finite(t, "t"), NumericError);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Losses, HandValues) {
  Tensor<double> x({2}, {0.0, 2.0}), y({2}, {1.0, 0.0});
  EXPECT_DOUBLE_EQ(l1_mean(x, x).value, 0.0);
  EXPECT_DOUBLE_EQ(l1_mean(x, y).value, 1.5);
  EXPECT_DOUBLE_EQ(lsq_mean(Tensor<double>({1}, {0.5}), 1.0).value, 0.25);
  EXPECT_THROW(l1_mean(x, Tensor<double>({3})), ShapeError);
}

TEST(Losses, SoftmaxSumsToOne) {
  auto p = softmax(random_tensor<float>({4, 13}, 3, -20, 20));
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 13; ++j) s += p[i * 13 + j];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  Param<float> p("w", {3});
  p.value = Tensor<float>({3}, {1, 2, 3});
  Adam<float> opt({&p}, {});
  opt.step();
  EXPECT_EQ(p.value, Tensor<float>({3}, {1, 2, 3}));
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  Param<double> p("w", {4});
  p.grad.fill(0.37);
  AdamConfig cfg;
  Adam<double> opt({&p}, cfg);
  opt.step();
  for (double v : p.value.values()) EXPECT_NEAR(v, -cfg.lr, 1e-9);
  p.grad = Tensor<double>({4}, -2.0);
  Param<double> q("w", {4});
  q.grad.fill(-5.0);
  Adam<double> opt2({&q}, cfg);
  opt2.step();
  for (double v : q.value.values()) EXPECT_NEAR(v, cfg.lr, 1e-9);
}

TEST(Adam, ShapeMismatchThrows) {
  Param<float> p("w", {3});
  Adam<float> opt({&p}, {});
  p.grad = Tensor<float>({4});
  EXPECT_THROW(opt.step(), ShapeError);
}

TEST(Adam, DeterministicRuns) {
  auto run = [] {
    Param<float> p("w", {16});
    std::mt19937_64 rng(9);
    fill_truncated_normal(p.value, 0.02, rng);
    Adam<float> opt({&p}, {});
    for (int s = 0; s < 20; ++s) {
      for (std::size_t i = 0; i < 16; ++i) p.grad[i] = std::sin(p.value[i] * 100.0f + s);
      opt.step();
    }
    return p.value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Init, TruncatedNormal) {
  Tensor<double> t({20000});
  std::mt19937_64 rng(1);
  fill_truncated_normal(t, 0.02, rng);
  double m = 0, m2 = 0;
  for (double v : t.values()) {
    EXPECT_LE(std::abs(v), 0.04);
    m += v;
    m2 += v * v;
  }
  m /= t.size();
  EXPECT_NEAR(m, 0.0, 1e-3);
  // Variance of a normal truncated at +-2 sigma is 0.774 sigma^2.
  EXPECT_NEAR(std::sqrt(m2 / t.size()), 0.02 * std::sqrt(0.774), 5e-4);
}

// ---- finite-difference checks, one per layer kind ----

namespace {

template <typename T, typename Layer, typename Cache>
GradCheckReport check_layer(Layer& layer, Tensor<T> x, std::uint64_t seed) {
  const Tensor<T> probe_dir = random_direction<T>(layer.forward(x).shape(), seed);
  Tensor<T> gx;
  std::vector<GradProbe<T>> probes;
  layer.for_each_param([&](Param<T>& p) { probes.push_back({p.name, &p.value, &p.grad}); });
  probes.push_back({"input", &x, &gx});
  auto loss = [&] { return dot(layer.forward(x), probe_dir); };
  auto grads = [&] {
    layer.for_each_param([](Param<T>& p) { p.zero_grad(); });
    Cache cache;
    layer.forward(x, &cache);
    gx = layer.backward(cache, probe_dir);
  };
  return gradient_check<T>(loss, grads, probes);
}

}  // namespace

template <typename T>
class LayerGrad : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(LayerGrad, Precisions);

TYPED_TEST(LayerGrad, Dense) {
  using T = TypeParam;
  Dense<T> d("dense", 12, 5);
  std::mt19937_64 rng(1);
  d.init(rng, 0.3);
  auto r = check_layer<T, Dense<T>, DenseCache<T>>(d, random_tensor<T>({3, 12}, 2), 3);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TYPED_TEST(LayerGrad, Conv) {
  using T = TypeParam;
  Conv2d<T> c("conv", {2, 3, 4, 2, 1, true});
  std::mt19937_64 rng(1);
  c.init(rng, 0.3);
  auto r = check_layer<T, Conv2d<T>, ConvCache<T>>(c, random_tensor<T>({2, 2, 8, 8}, 2), 4);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TYPED_TEST(LayerGrad, TransposeConv) {
  using T = TypeParam;
  TransposeConv2d<T> c("tconv", {3, 2, 4, 2, 1, true});
  std::mt19937_64 rng(1);
  c.init(rng, 0.3);
  auto r = check_layer<T, TransposeConv2d<T>, TransposeConvCache<T>>(c, random_tensor<T>({2, 3, 4, 4}, 2), 5);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TYPED_TEST(LayerGrad, BatchNormTrain) {
  using T = TypeParam;
  BatchNorm2d<T> bn("bn", 3);
  std::mt19937_64 rng(1);
  fill_uniform(bn.scale().value, 0.5, 1.5, rng);
  fill_uniform(bn.shift().value, -0.5, 0.5, rng);
  Tensor<T> x = random_tensor<T>({4, 3, 3, 3}, 2, -2, 2);
  const auto dir = random_direction<T>(x.shape(), 6);
  Tensor<T> gx;
  std::vector<GradProbe<T>> probes = {{"scale", &bn.scale().value, &bn.scale().grad},
                                      {"shift", &bn.shift().value, &bn.shift().grad},
                                      {"input", &x, &gx}};
  auto loss = [&] { return dot(bn.forward(x, Mode::Train), dir); };
  auto grads = [&] {
    bn.for_each_param([](Param<T>& p) { p.zero_grad(); });
    BatchNormCache<T> cache;
    bn.forward(x, Mode::Train, &cache);
    gx = bn.backward(cache, dir);
  };
  EXPECT_LT(gradient_check<T>(loss, grads, probes).max_rel_error, 1e-3);
}

TYPED_TEST(LayerGrad, Activations) {
  using T = TypeParam;
  // Inputs kept away from 0 so no finite-difference step crosses a kink.
  Tensor<T> x = random_tensor<T>({40}, 7, 0.05, 1.0);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  const auto dir = random_direction<T>(x.shape(), 8);
  Tensor<T> gx;
  std::vector<GradProbe<T>> probes = {{"input", &x, &gx}};
  for (int kind = 0; kind < 3; ++kind) {
    auto fwd = [&] { return kind == 0 ? relu(x) : kind == 1 ? leaky_relu(x) : nn::tanh(x); };
    auto loss = [&] { return dot(fwd(), dir); };
    auto grads = [&] {
      gx = kind == 0 ? relu_backward(x, dir) : kind == 1 ? leaky_relu_backward(x, dir) : tanh_backward(fwd(), dir);
    };
    EXPECT_LT(gradient_check<T>(loss, grads, probes).max_rel_error, 1e-3) << "activation " << kind;
  }
}

TYPED_TEST(LayerGrad, Losses) {
  using T = TypeParam;
  Tensor<T> a = random_tensor<T>({3, 5}, 1), b = random_tensor<T>({3, 5}, 2);
  Tensor<T> g;
  std::vector<GradProbe<T>> probes = {{"a", &a, &g}};
  EXPECT_LT(gradient_check<T>([&] { return lsq_mean(a, 1.0).value; }, [&] { g = lsq_mean(a, 1.0).grad; }, probes)
                .max_rel_error,
            1e-3);
  EXPECT_LT(gradient_check<T>([&] { return l1_mean(a, b).value; }, [&] { g = l1_mean(a, b).grad; }, probes)
                .max_rel_error,
            1e-3);
  std::vector<int> labels = {0, 4, 2};
  EXPECT_LT(gradient_check<T>([&] { return softmax_cross_entropy(a, labels).value; },
                              [&] { g = softmax_cross_entropy(a, labels).grad; }, probes)
                .max_rel_error,
            1e-3);
}

TEST(GradCheck, ExcludePredicateSkipsEntries) {
  Tensor<double> x({4}, {-1.0, 0.0, 1.0, 2.0});
  Tensor<double> gx;
  std::vector<GradProbe<double>> probes = {{"input", &x, &gx}};
  const auto dir = random_direction<double>({4}, 1);
  GradCheckOptions opt;
  opt.exclude = [&](const std::string&, std::size_t i) { return x[i] == 0.0; };
  auto r = gradient_check<double>([&] { return dot(relu(x), dir); }, [&] { gx = relu_backward(x, dir); }, probes, opt);
  EXPECT_EQ(r.probes[0].checked, 3);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
  Tensor<double> x({3}, {0.5, 1.0, 1.5});
  Tensor<double> g({3}, 0.0);
  std::vector<GradProbe<double>> probes = {{"x", &x, &g}};
  auto r = gradient_check<double>([&] { return dot(x, x); }, [&] { g = x; }, probes);  // true gradient is 2x
  EXPECT_GT(r.max_rel_error, 0.4);
  EXPECT_FALSE(r.passed(1e-3));
}
