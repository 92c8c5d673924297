#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seggan/convcrf.hpp"
#include "seggan/error.hpp"
#include "seggan/gradcheck.hpp"
#include "seggan/ops.hpp"

namespace seggan {
namespace {

Tensor random_image(int h, int w, std::uint64_t seed) {
  return random_tensor({1, 3, h, w}, seed, 0.0, 1.0);
}

Tensor random_prob(int c, int h, int w, std::uint64_t seed) {
  return softmax_channels(random_tensor({1, c, h, w}, seed, -2.0, 2.0));
}

CrfParams random_params(int classes, std::uint64_t seed) {
  CrfParams p = CrfParams::potts(classes);
  Tensor noise = random_tensor({1, 1, classes, classes}, seed, -0.5, 0.5);
  for (std::size_t i = 0; i < p.compat.size(); ++i) p.compat[i] += noise[i];
  Tensor w = random_tensor({1, 1, 1, 2}, seed + 1, 0.5, 1.5);
  p.kernel_weights = {w[0], w[1]};
  return p;
}

// Independent message computation over all pixel pairs.
Tensor brute_messages(const Tensor& image, const Tensor& q,
                      const ConvCrfConfig& cfg, const CrfParams& p) {
  Tensor out(q.shape());
  const int r = cfg.filter_size / 2;
  for (int yi = 0; yi < q.h(); ++yi)
    for (int xi = 0; xi < q.w(); ++xi)
      for (int yj = 0; yj < q.h(); ++yj)
        for (int xj = 0; xj < q.w(); ++xj) {
          if ((yi == yj && xi == xj) || std::abs(yi - yj) > r ||
              std::abs(xi - xj) > r)
            continue;
          double pos = (yi - yj) * (yi - yj) + (xi - xj) * (xi - xj);
          double col = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            double d = image.at(0, ch, yi, xi) - image.at(0, ch, yj, xj);
            col += d * d;
          }
          double k = p.kernel_weights[0] *
                         std::exp(-pos / (2 * cfg.theta_alpha * cfg.theta_alpha) -
                                  col / (2 * cfg.theta_beta * cfg.theta_beta)) +
                     p.kernel_weights[1] *
                         std::exp(-pos / (2 * cfg.theta_gamma * cfg.theta_gamma));
          for (int c = 0; c < q.c(); ++c) out.at(0, c, yi, xi) += k * q.at(0, c, yj, xj);
        }
  return out;
}

void expect_distribution(const Tensor& q, double tol = 1e-6) {
  for (int n = 0; n < q.n(); ++n)
    for (std::size_t p = 0; p < q.shape().plane(); ++p) {
      double s = 0.0;
      for (int c = 0; c < q.c(); ++c) s += q.plane(n, c)[p];
      ASSERT_NEAR(s, 1.0, tol);
    }
}

TEST(GaussianKernels, ConstantImageReducesToSpatialKernel) {
  Tensor image({1, 3, 5, 6}, 0.4);
  ConvCrfConfig cfg = ConvCrfConfig::defaults(5, 1);
  GaussianKernelStack ks = build_gaussian_kernels(image, cfg);
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) {
      const int m = (dy + 2) * 5 + (dx + 2);
      const double expected =
          (dy == 0 && dx == 0)
              ? 0.0
              : std::exp(-(dy * dy + dx * dx) /
                         (2 * cfg.theta_alpha * cfg.theta_alpha));
      EXPECT_NEAR(ks.appearance_at(m, 2, 2), expected, 1e-15);
    }
}

TEST(GaussianKernels, InfiniteBandwidthsGiveUnitWeights) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 1);
  cfg.theta_alpha = cfg.theta_beta = cfg.theta_gamma = 1e12;
  GaussianKernelStack ks = build_gaussian_kernels(random_image(4, 4, 1), cfg);
  for (int m = 0; m < 9; ++m) {
    EXPECT_NEAR(ks.appearance_at(m, 1, 1), m == 4 ? 0.0 : 1.0, 1e-12);
    EXPECT_NEAR(ks.smoothness_at(m, 2, 2), m == 4 ? 0.0 : 1.0, 1e-12);
  }
  // Offsets leaving the image are zero.
  EXPECT_EQ(ks.appearance_at(0, 0, 0), 0.0);
  EXPECT_EQ(ks.smoothness_at(8, 3, 3), 0.0);
}

TEST(GaussianKernels, TwoPixelClosedForm) {
  Tensor image({1, 3, 2, 1});
  for (int c = 0; c < 3; ++c) image.at(0, c, 1, 0) = 1.0;
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 1);
  cfg.theta_alpha = 1.0;
  cfg.theta_beta = 1.0;
  GaussianKernelStack ks = build_gaussian_kernels(image, cfg);
  // pixel (0,0) looks down (dy=+1, dx=0): m = 2*3 + 1 = 7
  EXPECT_NEAR(ks.appearance_at(7, 0, 0), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(ks.appearance_at(7, 0, 0), 0.1353352832366127, 1e-15);
  EXPECT_NEAR(ks.appearance_at(1, 1, 0), std::exp(-2.0), 1e-15);
}

TEST(GaussianKernels, SymmetricAndNonNegative) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(5, 1);
  GaussianKernelStack ks = build_gaussian_kernels(random_image(7, 6, 3), cfg);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 6; ++x)
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const int m = (dy + 2) * 5 + (dx + 2);
          EXPECT_GE(ks.appearance_at(m, y, x), 0.0);
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= 7 || nx < 0 || nx >= 6) {
            EXPECT_EQ(ks.appearance_at(m, y, x), 0.0);
            continue;
          }
          const int back = (-dy + 2) * 5 + (-dx + 2);
          EXPECT_EQ(ks.appearance_at(m, y, x), ks.appearance_at(back, ny, nx));
          EXPECT_EQ(ks.smoothness_at(m, y, x), ks.smoothness_at(back, ny, nx));
        }
}

TEST(GaussianKernels, RejectsBadConfig) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 1);
  EXPECT_THROW(build_gaussian_kernels(random_image(1, 1, 0), cfg), ConfigError);
  cfg.filter_size = 4;
  EXPECT_THROW(build_gaussian_kernels(random_image(4, 4, 0), cfg), ConfigError);
  cfg = ConvCrfConfig::defaults(3, 0);
  EXPECT_THROW(build_gaussian_kernels(random_image(4, 4, 0), cfg), ConfigError);
  cfg = ConvCrfConfig::defaults(3, 1);
  cfg.theta_beta = 0.0;
  EXPECT_THROW(build_gaussian_kernels(random_image(4, 4, 0), cfg), ConfigError);
}

TEST(MessagePass, UniformKernelsCountNeighbours) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 1);
  cfg.theta_alpha = cfg.theta_beta = cfg.theta_gamma = 1e12;
  GaussianKernelStack ks = build_gaussian_kernels(Tensor({1, 3, 5, 5}, 0.3), cfg);
  Tensor q({1, 3, 5, 5});
  const double dist[3] = {0.2, 0.5, 0.3};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 25; ++i) q.plane(0, c)[i] = dist[c];
  Tensor m = message_pass(q, ks, CrfParams::potts(3));
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(m.at(0, c, 2, 2), 2.0 * 8 * dist[c], 1e-9);  // interior
    EXPECT_NEAR(m.at(0, c, 0, 2), 2.0 * 5 * dist[c], 1e-9);  // edge
    EXPECT_NEAR(m.at(0, c, 0, 0), 2.0 * 3 * dist[c], 1e-9);  // corner
  }
}

TEST(MessagePass, SinglePixelHasNoMessage) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(1, 1);
  GaussianKernelStack ks = build_gaussian_kernels(random_image(1, 1, 2), cfg);
  Tensor m = message_pass(random_prob(3, 1, 1, 4), ks, CrfParams::potts(3));
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(MessagePass, MatchesPairwiseEnumeration) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (int k : {3, 5}) {
      ConvCrfConfig cfg = ConvCrfConfig::defaults(k, 1);
      Tensor image = random_image(6, 8, seed);
      Tensor q = random_prob(3, 6, 8, seed + 50);
      CrfParams p = random_params(3, seed);
      Tensor fast = message_pass(q, build_gaussian_kernels(image, cfg), p);
      Tensor slow = brute_messages(image, q, cfg, p);
      for (std::size_t i = 0; i < fast.size(); ++i) {
        EXPECT_NEAR(fast[i], slow[i], 1e-12);
      }
    }
  }
}

TEST(MeanField, ZeroCompatibilityReturnsInput) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 4);
  Tensor image = random_image(6, 8, 1);
  Tensor prob = random_prob(4, 6, 8, 2);
  CrfParams p = CrfParams::potts(4);
  std::fill(p.compat.begin(), p.compat.end(), 0.0);
  GaussianKernelStack ks = build_gaussian_kernels(image, cfg);
  Tensor step = mean_field_step(clamped_log(prob), prob, ks, p);
  Tensor out = convcrf_forward(image, prob, cfg, p);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    EXPECT_NEAR(step[i], prob[i], 1e-12);
    EXPECT_NEAR(out[i], prob[i], 1e-6);
  }
}

TEST(MeanField, SinglePixelIsSoftmaxOfUnary) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(1, 3);
  Tensor prob = random_prob(4, 1, 1, 8);
  CrfParams p = random_params(4, 3);
  GaussianKernelStack ks = build_gaussian_kernels(random_image(1, 1, 5), cfg);
  Tensor unary = random_tensor({1, 4, 1, 1}, 9);
  Tensor step = mean_field_step(unary, prob, ks, p);
  Tensor expected = softmax_channels(unary);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(step[i], expected[i], 1e-15);
  Tensor out = convcrf_forward(random_image(1, 1, 5), prob, cfg, p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], prob[i], 1e-12);
}

TEST(MeanField, TwoPixelEnumeration) {
  // Two vertically adjacent pixels, C = 2, Potts compatibility.
  Tensor image({1, 3, 2, 1});
  for (int c = 0; c < 3; ++c) image.at(0, c, 1, 0) = 0.5;
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 1);
  cfg.theta_alpha = 1.0;
  cfg.theta_beta = 1.0;
  cfg.theta_gamma = 2.0;
  CrfParams p = CrfParams::potts(2);
  p.kernel_weights = {0.7, 1.3};
  Tensor q({1, 2, 2, 1}, std::vector<double>{0.9, 0.2, 0.1, 0.8});
  Tensor unary({1, 2, 2, 1}, std::vector<double>{0.3, -0.4, -0.1, 0.6});

  const double app = std::exp(-0.5 - 3 * 0.25 / 2.0);
  const double smooth = std::exp(-1.0 / 8.0);
  const double k = 0.7 * app + 1.3 * smooth;
  // Pixel 0's neighbour is pixel 1 and vice versa; Potts gives
  // logit(c) = u(c) - k * q_other(1 - c).
  auto expected = [&](double u0, double u1, double other0, double other1) {
    const double z0 = u0 - k * other1;
    const double z1 = u1 - k * other0;
    const double e0 = std::exp(z0), e1 = std::exp(z1);
    return std::pair{e0 / (e0 + e1), e1 / (e0 + e1)};
  };
  auto [a0, a1] = expected(0.3, -0.1, 0.2, 0.8);
  auto [b0, b1] = expected(-0.4, 0.6, 0.9, 0.1);
  Tensor out = mean_field_step(unary, q, build_gaussian_kernels(image, cfg), p);
  EXPECT_NEAR(out.at(0, 0, 0, 0), a0, 1e-14);
  EXPECT_NEAR(out.at(0, 1, 0, 0), a1, 1e-14);
  EXPECT_NEAR(out.at(0, 0, 1, 0), b0, 1e-14);
  EXPECT_NEAR(out.at(0, 1, 1, 0), b1, 1e-14);
}

TEST(ConvCrf, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 3);
    Tensor image = random_image(6, 8, seed);
    Tensor prob = random_prob(3, 6, 8, seed + 100);
    CrfParams p = random_params(3, seed + 200);
    Tensor fast = convcrf_forward(image, prob, cfg, p);
    Tensor slow = brute_force_oracle(image, prob, cfg, p);
    for (std::size_t i = 0; i < fast.size(); ++i) {
      EXPECT_NEAR(fast[i], slow[i], 1e-6);
    }
  }
}

TEST(ConvCrf, OracleSweep) {
  std::uint64_t seed = 0;
  for (int k : {1, 3, 5, 7}) {
    for (int t : {1, 2, 3}) {
      for (int classes : {2, 4}) {
        for (auto [h, w] : {std::pair{8, 8}, std::pair{3, 5}, std::pair{1, 7}}) {
          if (k > 2 * std::max(h, w) - 1) continue;
          ++seed;
          ConvCrfConfig cfg = ConvCrfConfig::defaults(k, t);
          Tensor image = random_image(h, w, seed);
          Tensor prob = random_prob(classes, h, w, seed + 7);
          CrfParams p = random_params(classes, seed + 13);
          ConvCrfCache cache;
          Tensor fast = convcrf_forward(build_gaussian_kernels(image, cfg), prob,
                                        cfg, p, &cache);
          Tensor slow = brute_force_oracle(image, prob, cfg, p);
          double worst = 0.0;
          for (std::size_t i = 0; i < fast.size(); ++i) {
            worst = std::max(worst, std::abs(fast[i] - slow[i]));
          }
          EXPECT_LE(worst, 1e-6) << "k=" << k << " T=" << t;
          for (const Tensor& q : cache.iterates) expect_distribution(q);
        }
      }
    }
  }
}

TEST(ConvCrf, OracleDegenerateCases) {
  Tensor prob = random_prob(3, 1, 1, 3);
  Tensor out = brute_force_oracle(random_image(1, 1, 1),
                                  prob, ConvCrfConfig::defaults(3, 3),
                                  random_params(3, 2));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], prob[i], 1e-12);
  CrfParams zero = CrfParams::potts(3);
  std::fill(zero.compat.begin(), zero.compat.end(), 0.0);
  Tensor prob2 = random_prob(3, 5, 5, 4);
  Tensor out2 = brute_force_oracle(random_image(5, 5, 5), prob2,
                                   ConvCrfConfig::defaults(3, 3), zero);
  for (std::size_t i = 0; i < prob2.size(); ++i) EXPECT_NEAR(out2[i], prob2[i], 1e-12);
}

double total_variation(const Tensor& q) {
  double tv = 0.0;
  for (int c = 0; c < q.c(); ++c)
    for (int y = 0; y < q.h(); ++y)
      for (int x = 0; x < q.w(); ++x) {
        if (x + 1 < q.w()) tv += std::abs(q.at(0, c, y, x) - q.at(0, c, y, x + 1));
        if (y + 1 < q.h()) tv += std::abs(q.at(0, c, y, x) - q.at(0, c, y + 1, x));
      }
  return tv;
}

TEST(ConvCrf, SmoothsConfidentNoisyLabelsOnConstantImage) {
  // Two classes, confident left/right split with a few flipped pixels.
  // Less confident inputs can oscillate under parallel updates.
  Tensor image({1, 3, 6, 8}, 0.5);
  Tensor prob({1, 2, 6, 8});
  Tensor flips = random_tensor({1, 1, 6, 8}, 42, 0.0, 1.0);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      int label = x < 4 ? 0 : 1;
      if (flips.at(0, 0, y, x) < 0.15) label = 1 - label;
      prob.at(0, label, y, x) = 0.999;
      prob.at(0, 1 - label, y, x) = 0.001;
    }
  CrfParams p = CrfParams::potts(2);
  ConvCrfCache cache;
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 5);
  convcrf_forward(build_gaussian_kernels(image, cfg), prob, cfg, p, &cache);
  for (std::size_t t = 1; t < cache.iterates.size(); ++t) {
    EXPECT_LE(total_variation(cache.iterates[t]),
              total_variation(cache.iterates[t - 1]) + 1e-12)
        << "iteration " << t;
  }
  EXPECT_LT(total_variation(cache.iterates.back()), total_variation(prob));
}

TEST(ConvCrf, PermutationEquivariance) {
  const std::vector<int> perm{2, 0, 3, 1};
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor image = random_image(5, 6, seed);
    Tensor prob = random_prob(4, 5, 6, seed + 1);
    CrfParams p = random_params(4, seed + 2);
    Tensor prob_p(prob.shape());
    CrfParams pp = p;
    for (int c = 0; c < 4; ++c) {
      std::copy_n(prob.plane(0, c), 30, prob_p.plane(0, perm[c]));
      for (int d = 0; d < 4; ++d) pp.compat[perm[c] * 4 + perm[d]] = p.mu(c, d);
    }
    Tensor out = convcrf_forward(image, prob, cfg, p);
    Tensor out_p = convcrf_forward(image, prob_p, cfg, pp);
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 30; ++i)
        EXPECT_NEAR(out_p.plane(0, perm[c])[i], out.plane(0, c)[i], 1e-12);
  }
}

GradCheckCase crf_case(int iterations, std::uint64_t seed) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, iterations);
  Tensor image = random_image(5, 6, seed);
  GaussianKernelStack ks = build_gaussian_kernels(image, cfg);
  CrfParams base = random_params(3, seed + 3);
  Tensor proj = random_tensor({1, 3, 5, 6}, seed + 4);
  auto unpack = [base](const std::vector<Tensor>& in) {
    CrfParams p = base;
    p.compat = in[1].vec();
    p.kernel_weights = {in[2][0], in[2][1]};
    return p;
  };
  GradCheckCase c;
  c.inputs = {random_prob(3, 5, 6, seed + 5),
              Tensor({1, 1, 3, 3}, base.compat),
              Tensor({1, 1, 1, 2}, std::vector<double>{base.kernel_weights[0],
                                                       base.kernel_weights[1]})};
  c.value = [=](const std::vector<Tensor>& in) {
    return dot(convcrf_forward(ks, in[0], cfg, unpack(in), nullptr), proj);
  };
  c.gradient = [=](const std::vector<Tensor>& in) {
    ConvCrfCache cache;
    CrfParams p = unpack(in);
    convcrf_forward(ks, in[0], cfg, p, &cache);
    ConvCrfGrads g = convcrf_backward(proj, cache, ks, p);
    return std::vector<Tensor>{
        g.prob, Tensor({1, 1, 3, 3}, g.compat),
        Tensor({1, 1, 1, 2},
               std::vector<double>{g.kernel_weights[0], g.kernel_weights[1]})};
  };
  c.five_point = true;
  c.denominator_floor = 1e-6;
  return c;
}

TEST(ConvCrfBackward, ZeroGradOut) {
  ConvCrfConfig cfg = ConvCrfConfig::defaults(3, 2);
  Tensor image = random_image(4, 4, 1);
  GaussianKernelStack ks = build_gaussian_kernels(image, cfg);
  CrfParams p = random_params(3, 1);
  ConvCrfCache cache;
  convcrf_forward(ks, random_prob(3, 4, 4, 2), cfg, p, &cache);
  ConvCrfGrads g = convcrf_backward(Tensor({1, 3, 4, 4}), cache, ks, p);
  for (double v : g.prob.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.compat) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.kernel_weights[0], 0.0);
  EXPECT_EQ(g.kernel_weights[1], 0.0);
}

TEST(ConvCrfBackward, MatchesFiniteDifferences) {
  for (int t : {1, 3}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      EXPECT_LE(grad_check(crf_case(t, seed)).max_rel_error, 1e-4)
          << "T=" << t << " seed=" << seed;
    }
  }
}

}  // namespace
}  // namespace seggan
