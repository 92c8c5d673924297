#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <set>

#include "seggan/error.hpp"
#include "seggan/gradcheck.hpp"
#include "seggan/ops.hpp"
#include "test_util.hpp"

namespace seggan {
namespace {

using testing::projected_case;

constexpr double kTol = 1e-4;

GradCheckCase conv_case(const ConvSpec& spec, Shape in_shape,
                        std::uint64_t seed) {
  Tensor x = random_tensor(in_shape, seed);
  Tensor w = random_tensor(
      {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
      seed + 100);
  Tensor b = random_tensor({1, 1, 1, spec.out_channels}, seed + 200);
  const Tensor probe = conv2d_forward(x, w, b.vec(), spec);
  Tensor proj = random_tensor(probe.shape(), seed + 300);
  GradCheckCase c;
  c.inputs = {x, w, b};
  c.value = [spec, proj](const std::vector<Tensor>& in) {
    return dot(conv2d_forward(in[0], in[1], in[2].vec(), spec), proj);
  };
  c.gradient = [spec, proj](const std::vector<Tensor>& in) {
    ConvGrads g = conv2d_backward(proj, in[0], in[1], spec);
    return std::vector<Tensor>{g.input, g.weight,
                               Tensor(in[2].shape(), g.bias)};
  };
  return c;
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  ConvSpec spec{1, 1, 3, 1, 1, 1};
  Tensor x({1, 1, 3, 3});
  Tensor w = random_tensor({1, 1, 3, 3}, 7);
  std::vector<double> bias{0.0};
  Tensor y = conv2d_forward(x, w, bias, spec);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, AllOnesHandSum) {
  ConvSpec spec{1, 1, 3, 1, 1, 1};
  Tensor x({1, 1, 3, 3}, 1.0);
  Tensor w({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d_forward(x, w, {}, spec);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 2), 4.0);
  EXPECT_EQ(y.at(0, 0, 2, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 2, 2), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, DilatedShape) {
  ConvSpec spec{1, 1, 3, 1, 2, 2};
  Tensor y = conv2d_forward(random_tensor({1, 1, 5, 5}, 1),
                            random_tensor({1, 1, 3, 3}, 2), {}, spec);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  ConvSpec spec{2, 1, 3, 1, 1, 1};
  try {
    conv2d_forward(Tensor({1, 3, 4, 4}), Tensor({1, 2, 3, 3}), {}, spec);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[1,3,4,4]"), std::string::npos);
  }
  try {
    conv2d_forward(Tensor({1, 2, 4, 4}), Tensor({1, 2, 5, 5}), {}, spec);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,5,5]"), std::string::npos);
    EXPECT_NE(msg.find("[1,2,4,4]"), std::string::npos);
  }
}

TEST(Conv2d, ZeroGradOutGivesZeroGrads) {
  ConvSpec spec{2, 3, 3, 1, 1, 1};
  Tensor x = random_tensor({1, 2, 4, 4}, 3);
  Tensor w = random_tensor({3, 2, 3, 3}, 4);
  ConvGrads g = conv2d_backward(Tensor({1, 3, 4, 4}), x, w, spec);
  for (double v : g.input.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.weight.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ConvSpec plain{2, 3, 3, 1, 1, 1};
    EXPECT_LE(grad_check(conv_case(plain, {1, 2, 4, 4}, seed)).max_rel_error,
              kTol);
    ConvSpec dilated{2, 2, 3, 1, 2, 2};
    EXPECT_LE(
        grad_check(conv_case(dilated, {1, 2, 6, 5}, seed)).max_rel_error,
        kTol);
    ConvSpec strided{3, 2, 3, 2, 1, 1};
    EXPECT_LE(
        grad_check(conv_case(strided, {2, 3, 7, 6}, seed)).max_rel_error,
        kTol);
    ConvSpec pointwise{3, 2, 1, 1, 0, 1};
    EXPECT_LE(
        grad_check(conv_case(pointwise, {2, 3, 3, 4}, seed)).max_rel_error,
        kTol);
  }
}

TEST(Conv2d, CorruptedBackwardIsDetected) {
  GradCheckCase c = conv_case({2, 3, 3, 1, 1, 1}, {1, 2, 4, 4}, 0);
  auto good = c.gradient;
  c.gradient = [good](const std::vector<Tensor>& in) {
    auto g = good(in);
    g[1] *= 1.1;
    return g;
  };
  EXPECT_GT(grad_check(c).max_rel_error, 1e-2);
}

TEST(Conv2d, LinearMapFiniteDifferencesAreExact) {
  ConvSpec spec{2, 2, 3, 1, 1, 1};
  Tensor w = random_tensor({2, 2, 3, 3}, 11);
  Tensor x = random_tensor({1, 2, 4, 4}, 12);
  GradCheckCase c = projected_case(
      x, [&](const Tensor& t) { return conv2d_forward(t, w, {}, spec); },
      [&](const Tensor& g, const Tensor& t) {
        return conv2d_backward(g, t, w, spec).input;
      },
      13);
  EXPECT_LE(grad_check(c).max_rel_error, 1e-8);
}

TEST(Conv2d, LinearInInputAndWeight) {
  ConvSpec spec{2, 3, 3, 1, 2, 2};
  Tensor x = random_tensor({2, 2, 6, 6}, 1);
  Tensor y = random_tensor({2, 2, 6, 6}, 2);
  Tensor w = random_tensor({3, 2, 3, 3}, 3);
  Tensor v = random_tensor({3, 2, 3, 3}, 4);
  const double a = 2.75;
  Tensor fx = conv2d_forward(x, w, {}, spec);
  Tensor fy = conv2d_forward(y, w, {}, spec);
  Tensor fax = conv2d_forward(x * a, w, {}, spec);
  Tensor fsum = conv2d_forward(x + y, w, {}, spec);
  Tensor gw = conv2d_forward(x, w + v, {}, spec);
  Tensor gv = conv2d_forward(x, v, {}, spec);
  for (std::size_t i = 0; i < fx.size(); ++i) {
    EXPECT_NEAR(fax[i], a * fx[i], 1e-10);
    EXPECT_NEAR(fsum[i], fx[i] + fy[i], 1e-10);
    EXPECT_NEAR(gw[i], fx[i] + gv[i], 1e-10);
  }
}

TEST(Conv2d, Deterministic) {
  ConvSpec spec{3, 4, 3, 2, 1, 1};
  Tensor x = random_tensor({2, 3, 9, 9}, 5);
  Tensor w = random_tensor({4, 3, 3, 3}, 6);
  Tensor a = conv2d_forward(x, w, {}, spec);
  Tensor b = conv2d_forward(x, w, {}, spec);
  EXPECT_EQ(a.vec(), b.vec());
  EXPECT_EQ(conv2d_backward(a, x, w, spec).weight.vec(),
            conv2d_backward(b, x, w, spec).weight.vec());
}

// Copies live at different addresses modulo the SIMD width; results must not
// depend on where a buffer happens to start.
TEST(Conv2d, IndependentOfBufferAlignment) {
  for (int out_channels : {1, 3}) {
    ConvSpec spec{2, out_channels, 3, 1, 1, 1};
    const Tensor x = random_tensor({2, 2, 9, 9}, 11);
    const Tensor w = random_tensor({out_channels, 2, 3, 3}, 12);
    const Tensor b = random_tensor({1, 1, 1, out_channels}, 13);
    const Tensor y = conv2d_forward(x, w, b.vec(), spec);
    const ConvGrads g = conv2d_backward(y, x, w, spec);
    std::vector<Tensor> xs, gs;
    std::set<std::uintptr_t> residues;
    for (int k = 0; k < 16; ++k) {
      xs.push_back(x);
      gs.push_back(y);
      residues.insert(reinterpret_cast<std::uintptr_t>(xs.back().vec().data()) % 64);
      residues.insert(reinterpret_cast<std::uintptr_t>(gs.back().vec().data()) % 64);
    }
    ASSERT_GE(residues.size(), 2u);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      EXPECT_EQ(conv2d_forward(xs[k], w, b.vec(), spec).vec(), y.vec());
      const ConvGrads gk = conv2d_backward(gs[k], xs[k], w, spec);
      EXPECT_EQ(gk.input.vec(), g.input.vec());
      EXPECT_EQ(gk.weight.vec(), g.weight.vec());
      EXPECT_EQ(gk.bias, g.bias);
    }
  }
}

TEST(Activations, LeakyReluDefinition) {
  Tensor x({1, 1, 1, 3}, std::vector<double>{-1.0, 3.0, 0.0});
  Tensor y = leaky_relu_forward(x, 0.2);
  EXPECT_DOUBLE_EQ(y[0], -0.2);
  EXPECT_DOUBLE_EQ(y[1], 3.0);
  EXPECT_DOUBLE_EQ(y[2], 0.0);
  Tensor g = leaky_relu_backward(Tensor(x.shape(), 1.0), x, 0.2);
  EXPECT_DOUBLE_EQ(g[2], 0.2);  // derivative at 0 is the slope
}

TEST(Activations, ReluDefinition) {
  Tensor x({1, 1, 1, 2}, std::vector<double>{-1.0, 3.0});
  Tensor y = relu_forward(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 3.0);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (double slope : {0.2, 0.0}) {
      Tensor x = random_tensor({2, 3, 4, 4}, seed);
      GradCheckCase c = projected_case(
          x, [slope](const Tensor& t) { return leaky_relu_forward(t, slope); },
          [slope](const Tensor& g, const Tensor& t) {
            return leaky_relu_backward(g, t, slope);
          },
          seed);
      c.skip = [x](std::size_t, std::size_t i) {
        return std::abs(x[i]) < 1e-3;
      };
      EXPECT_LE(grad_check(c).max_rel_error, kTol);
    }
    GradCheckCase s = projected_case(
        random_tensor({2, 3, 4, 4}, seed, -4.0, 4.0), sigmoid_forward,
        [](const Tensor& g, const Tensor& t) {
          return sigmoid_backward(g, sigmoid_forward(t));
        },
        seed);
    EXPECT_LE(grad_check(s).max_rel_error, kTol);
  }
}

TEST(Activations, SigmoidRange) {
  Tensor x({1, 1, 1, 5}, std::vector<double>{0.0, 5.0, 10.0, 20.0, -30.0});
  Tensor y = sigmoid_forward(x);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_LT(y[1], y[2]);
  EXPECT_LT(y[2], y[3]);
  EXPECT_LT(y[3], 1.0);
  EXPECT_GT(y[4], 0.0);
}

TEST(BatchNorm, ConstantChannelGivesShift) {
  Tensor x({2, 2, 3, 3});
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 9; ++i) {
      x.plane(n, 0)[i] = 3.5;
      x.plane(n, 1)[i] = -1.25;
    }
  }
  std::vector<double> scale{2.0, 0.5}, shift{0.3, -0.7};
  BatchNormStats stats(2);
  Tensor y = batch_norm_forward(x, scale, shift, stats, Mode::Train, nullptr);
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 9; ++i) {
      EXPECT_DOUBLE_EQ(y.plane(n, 0)[i], 0.3);
      EXPECT_DOUBLE_EQ(y.plane(n, 1)[i], -0.7);
    }
  }
  EXPECT_NEAR(stats.running_mean[0], 0.35, 1e-12);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  Tensor x = random_tensor({2, 3, 4, 4}, 9);
  std::vector<double> scale(3, 1.0), shift(3, 0.0);
  BatchNormStats stats(3);
  Tensor y = batch_norm_forward(x, scale, shift, stats, Mode::Eval, nullptr);
  const double k = 1.0 / std::sqrt(1.0 + kBatchNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] * k, 1e-15);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, DegenerateBatchRejected) {
  std::vector<double> scale(1, 1.0), shift(1, 0.0);
  BatchNormStats stats(1);
  EXPECT_THROW(batch_norm_forward(Tensor({1, 1, 1, 1}), scale, shift, stats,
                                  Mode::Train, nullptr),
               ConfigError);
  EXPECT_NO_THROW(batch_norm_forward(Tensor({1, 1, 1, 1}), scale, shift,
                                     stats, Mode::Eval, nullptr));
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      Tensor x = random_tensor({2, 3, 3, 4}, seed);
      Tensor scale = random_tensor({1, 1, 1, 3}, seed + 10, 0.5, 1.5);
      Tensor shift = random_tensor({1, 1, 1, 3}, seed + 20);
      BatchNormStats stats(3);
      stats.running_mean = {0.1, -0.2, 0.3};
      stats.running_var = {0.8, 1.2, 0.5};
      Tensor proj = random_tensor(x.shape(), seed + 30);
      auto run = [stats, mode](const std::vector<Tensor>& in,
                               BatchNormCache* cache) {
        BatchNormStats s = stats;
        return batch_norm_forward(in[0], in[1].vec(), in[2].vec(), s, mode,
                                  cache);
      };
      GradCheckCase c;
      c.inputs = {x, scale, shift};
      c.value = [run, proj](const std::vector<Tensor>& in) {
        return dot(run(in, nullptr), proj);
      };
      c.gradient = [run, proj](const std::vector<Tensor>& in) {
        BatchNormCache cache;
        run(in, &cache);
        BatchNormGrads g = batch_norm_backward(proj, cache, in[1].vec());
        return std::vector<Tensor>{g.input, Tensor(in[1].shape(), g.scale),
                                   Tensor(in[2].shape(), g.shift)};
      };
      EXPECT_LE(grad_check(c).max_rel_error, kTol) << "seed " << seed;
    }
  }
}

TEST(Softmax, UniformLogits) {
  Tensor y = softmax_channels(Tensor({1, 4, 2, 2}, 0.7));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ClosedForm) {
  Tensor x({1, 2, 1, 1}, std::vector<double>{0.0, std::log(3.0)});
  Tensor y = softmax_channels(x);
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = random_tensor({2, 5, 3, 4}, seed, -20.0, 20.0);
    Tensor shifted = x;
    Tensor offsets = random_tensor({2, 1, 3, 4}, seed + 1, -50.0, 50.0);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 5; ++c)
        for (int yy = 0; yy < 3; ++yy)
          for (int xx = 0; xx < 4; ++xx)
            shifted.at(n, c, yy, xx) += offsets.at(n, 0, yy, xx);
    Tensor a = softmax_channels(x);
    Tensor b = softmax_channels(shifted);
    for (int n = 0; n < 2; ++n) {
      for (int p = 0; p < 12; ++p) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += a.plane(n, c)[p];
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GradCheckCase c = projected_case(
        random_tensor({2, 4, 3, 3}, seed, -3.0, 3.0), softmax_channels,
        [](const Tensor& g, const Tensor& t) {
          return softmax_channels_backward(g, softmax_channels(t));
        },
        seed);
    EXPECT_LE(grad_check(c).max_rel_error, kTol);
  }
}

TEST(Upsample, FactorOneIsIdentity) {
  Tensor x = random_tensor({2, 3, 5, 4}, 3);
  EXPECT_EQ(bilinear_upsample(x, 1).vec(), x.vec());
}

TEST(Upsample, ConstantPreservedExactly) {
  Tensor x({1, 2, 3, 5}, 0.1);
  for (int f : {2, 3, 8}) {
    Tensor y = bilinear_upsample(x, f);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 3 * f, 5 * f}));
    for (double v : y.data()) EXPECT_EQ(v, 0.1);
  }
}

TEST(Upsample, HalfPixelConvention) {
  Tensor x({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
  Tensor y = bilinear_upsample(x, 2);
  // Sample centres at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 0.25);
  EXPECT_DOUBLE_EQ(y[2], 0.75);
  EXPECT_DOUBLE_EQ(y[3], 1.0);
}

TEST(Upsample, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = random_tensor({1, 1, 2, 2}, seed);
    EXPECT_EQ(bilinear_upsample(x, 2).shape(), (Shape{1, 1, 4, 4}));
    for (int f : {2, 3, 8}) {
      GradCheckCase c = projected_case(
          random_tensor({2, 2, 3, 2}, seed), [f](const Tensor& t) {
            return bilinear_upsample(t, f);
          },
          [f](const Tensor& g, const Tensor&) {
            return bilinear_upsample_backward(g, f);
          },
          seed);
      EXPECT_LE(grad_check(c).max_rel_error, kTol);
    }
  }
}

}  // namespace
}  // namespace seggan
