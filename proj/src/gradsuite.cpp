#include "seggan/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "seggan/convcrf.hpp"
#include "seggan/discriminator.hpp"
#include "seggan/gradcheck.hpp"
#include "seggan/labels.hpp"
#include "seggan/layers.hpp"
#include "seggan/losses.hpp"
#include "seggan/ops.hpp"
#include "seggan/rng.hpp"
#include "seggan/segnet.hpp"

namespace seggan {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kCompositeTolerance = 1e-3;

using Op = std::function<Tensor(const Tensor&)>;
using Back = std::function<Tensor(const Tensor& grad_out, const Tensor& x)>;

GradCheckCase projected(Tensor x, Op op, Back back, std::uint64_t seed) {
  Tensor proj = random_tensor(op(x).shape(), seed ^ 0x5eedULL);
  GradCheckCase c;
  c.inputs = {std::move(x)};
  c.value = [op, proj](const std::vector<Tensor>& in) { return dot(op(in[0]), proj); };
  c.gradient = [back, proj](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{back(proj, in[0])};
  };
  return c;
}

GradCheckCase conv_case(const ConvSpec& spec, Shape in_shape, std::uint64_t seed,
                        bool fault) {
  Tensor x = random_tensor(in_shape, seed);
  Tensor w = random_tensor({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                           seed + 100);
  Tensor b = random_tensor({1, 1, 1, spec.out_channels}, seed + 200);
  Tensor proj = random_tensor(conv2d_forward(x, w, b.vec(), spec).shape(), seed + 300);
  GradCheckCase c;
  c.inputs = {x, w, b};
  c.value = [spec, proj](const std::vector<Tensor>& in) {
    return dot(conv2d_forward(in[0], in[1], in[2].vec(), spec), proj);
  };
  c.gradient = [spec, proj, fault](const std::vector<Tensor>& in) {
    ConvGrads g = conv2d_backward(proj, in[0], in[1], spec);
    if (fault) g.weight *= 1.1;
    return std::vector<Tensor>{g.input, g.weight, Tensor(in[2].shape(), g.bias)};
  };
  return c;
}

GradCheckCase activation_case(double slope, std::uint64_t seed) {
  Tensor x = random_tensor({2, 3, 4, 4}, seed);
  GradCheckCase c = projected(
      x,
      [slope](const Tensor& t) {
        return slope == 0.0 ? relu_forward(t) : leaky_relu_forward(t, slope);
      },
      [slope](const Tensor& g, const Tensor& t) {
        return slope == 0.0 ? relu_backward(g, t) : leaky_relu_backward(g, t, slope);
      },
      seed);
  c.skip = [x](std::size_t, std::size_t i) { return std::abs(x[i]) < 1e-3; };
  return c;
}

GradCheckCase batch_norm_case(Mode mode, std::uint64_t seed) {
  Tensor x = random_tensor({2, 3, 3, 4}, seed);
  Tensor scale = random_tensor({1, 1, 1, 3}, seed + 10, 0.5, 1.5);
  Tensor shift = random_tensor({1, 1, 1, 3}, seed + 20);
  BatchNormStats stats(3);
  stats.running_mean = {0.1, -0.2, 0.3};
  stats.running_var = {0.8, 1.2, 0.5};
  Tensor proj = random_tensor(x.shape(), seed + 30);
  auto run = [stats, mode](const std::vector<Tensor>& in, BatchNormCache* cache) {
    BatchNormStats s = stats;
    return batch_norm_forward(in[0], in[1].vec(), in[2].vec(), s, mode, cache);
  };
  GradCheckCase c;
  c.inputs = {x, scale, shift};
  c.value = [run, proj](const std::vector<Tensor>& in) { return dot(run(in, nullptr), proj); };
  c.gradient = [run, proj](const std::vector<Tensor>& in) {
    BatchNormCache cache;
    run(in, &cache);
    BatchNormGrads g = batch_norm_backward(proj, cache, in[1].vec());
    return std::vector<Tensor>{g.input, Tensor(in[1].shape(), g.scale),
                               Tensor(in[2].shape(), g.shift)};
  };
  return c;
}

LossConfig reduction_config(bool sum) {
  LossConfig c;
  if (sum) c.reduction = Reduction::Sum;
  return c;
}

GradCheckCase loss_d_case(bool sum, std::uint64_t seed) {
  const LossConfig cfg = reduction_config(sum);
  GradCheckCase c;
  c.inputs = {random_tensor({2, 1, 2, 3}, seed, 0.05, 0.95),
              random_tensor({2, 1, 2, 3}, seed + 1, 0.05, 0.95)};
  c.value = [cfg](const std::vector<Tensor>& in) {
    return loss_discriminator(in[0], in[1], cfg).value;
  };
  c.gradient = [cfg](const std::vector<Tensor>& in) {
    LossResult r = loss_discriminator(in[0], in[1], cfg);
    return std::vector<Tensor>{r.grad, r.grad_other};
  };
  return c;
}

GradCheckCase loss_adv_case(bool sum, std::uint64_t seed) {
  const LossConfig cfg = reduction_config(sum);
  GradCheckCase c;
  c.inputs = {random_tensor({2, 1, 2, 3}, seed + 2, 0.05, 0.95)};
  c.value = [cfg](const std::vector<Tensor>& in) { return loss_adv(in[0], cfg).value; };
  c.gradient = [cfg](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{loss_adv(in[0], cfg).grad};
  };
  return c;
}

GradCheckCase loss_ce_case(bool sum, std::uint64_t seed) {
  const LossConfig cfg = reduction_config(sum);
  LabelMap y(2, 3, 3);
  Rng rng(seed);
  for (auto& v : y.values) {
    v = rng.below(6) == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(4));
  }
  GradCheckCase c;
  c.inputs = {softmax_channels(random_tensor({2, 4, 3, 3}, seed + 3))};
  c.value = [cfg, y](const std::vector<Tensor>& in) { return loss_ce(in[0], y, cfg).value; };
  c.gradient = [cfg, y](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{loss_ce(in[0], y, cfg).grad};
  };
  return c;
}

GradCheckCase crf_case(int iterations, std::uint64_t seed) {
  const ConvCrfConfig cfg = ConvCrfConfig::defaults(3, iterations);
  const Tensor image = random_tensor({1, 3, 5, 6}, seed, 0.0, 1.0);
  const GaussianKernelStack ks = build_gaussian_kernels(image, cfg);
  CrfParams base = CrfParams::potts(3);
  Tensor noise = random_tensor({1, 1, 3, 3}, seed + 3, -0.5, 0.5);
  for (std::size_t i = 0; i < base.compat.size(); ++i) base.compat[i] += noise[i];
  Tensor w = random_tensor({1, 1, 1, 2}, seed + 4, 0.5, 1.5);
  base.kernel_weights = {w[0], w[1]};
  Tensor proj = random_tensor({1, 3, 5, 6}, seed + 5);
  auto unpack = [base](const std::vector<Tensor>& in) {
    CrfParams p = base;
    p.compat = in[1].vec();
    p.kernel_weights = {in[2][0], in[2][1]};
    return p;
  };
  GradCheckCase c;
  c.inputs = {softmax_channels(random_tensor({1, 3, 5, 6}, seed + 6, -2.0, 2.0)),
              Tensor({1, 1, 3, 3}, base.compat), w};
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
        Tensor({1, 1, 1, 2}, std::vector<double>{g.kernel_weights[0], g.kernel_weights[1]})};
  };
  c.five_point = true;
  c.denominator_floor = 1e-6;
  return c;
}

// Parameters are swapped in and out of the live network by `load`.
template <typename Net>
GradCheckCase network_case(Net& net, std::vector<Parameter*> params, Tensor first,
                           std::function<Tensor(const Tensor&)> forward,
                           std::function<Tensor(const Tensor&)> backward, Tensor proj,
                           std::uint64_t seed) {
  GradCheckCase c;
  c.inputs.push_back(std::move(first));
  for (auto* p : params) c.inputs.push_back(p->value);
  auto load = [params](const std::vector<Tensor>& in) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = in[k + 1];
  };
  c.value = [=](const std::vector<Tensor>& in) {
    load(in);
    return dot(forward(in[0]), proj);
  };
  c.gradient = [=, &net](const std::vector<Tensor>& in) {
    load(in);
    zero_grads(net.parameters());
    forward(in[0]);
    std::vector<Tensor> g{backward(proj)};
    for (auto* p : params) g.emplace_back(p->value.shape(), p->value.grad());
    return g;
  };
  c.sample_seed = seed;
  return c;
}

struct Runner {
  const GradSuiteOptions& opts;
  std::vector<GradSuiteRow> rows;

  void run(const std::string& op, double tol, double epsilon,
           const std::function<GradCheckCase(std::uint64_t)>& make) {
    GradSuiteRow row{op, 0.0, tol, 0, 0, opts.num_seeds};
    for (int k = 0; k < opts.num_seeds; ++k) {
      const GradCheckResult r = grad_check(make(opts.seed + k), epsilon);
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      row.entries_checked += r.entries_checked;
      row.entries_skipped += r.entries_skipped;
    }
    rows.push_back(row);
  }
};

}  // namespace

std::vector<GradSuiteRow> run_grad_suite(const GradSuiteOptions& opts) {
  Runner r{opts, {}};
  const bool fault = opts.inject_fault;
  r.run("conv2d", kOpTolerance, 1e-4, [fault](std::uint64_t s) {
    return conv_case({2, 3, 3, 1, 1, 1}, {1, 2, 4, 4}, s, fault);
  });
  r.run("conv2d_dilated", kOpTolerance, 1e-4, [](std::uint64_t s) {
    return conv_case({2, 2, 3, 1, 2, 2}, {1, 2, 6, 5}, s, false);
  });
  r.run("conv2d_strided", kOpTolerance, 1e-4, [](std::uint64_t s) {
    return conv_case({3, 2, 3, 2, 1, 1}, {2, 3, 7, 6}, s, false);
  });
  r.run("leaky_relu", kOpTolerance, 1e-4, [](std::uint64_t s) { return activation_case(0.2, s); });
  r.run("relu", kOpTolerance, 1e-4, [](std::uint64_t s) { return activation_case(0.0, s); });
  r.run("batch_norm_train", kOpTolerance, 1e-4,
        [](std::uint64_t s) { return batch_norm_case(Mode::Train, s); });
  r.run("batch_norm_eval", kOpTolerance, 1e-4,
        [](std::uint64_t s) { return batch_norm_case(Mode::Eval, s); });
  r.run("softmax", kOpTolerance, 1e-4, [](std::uint64_t s) {
    return projected(random_tensor({2, 4, 3, 3}, s, -3.0, 3.0), softmax_channels,
                     [](const Tensor& g, const Tensor& t) {
                       return softmax_channels_backward(g, softmax_channels(t));
                     },
                     s);
  });
  r.run("sigmoid", kOpTolerance, 1e-4, [](std::uint64_t s) {
    return projected(random_tensor({2, 3, 4, 4}, s, -4.0, 4.0), sigmoid_forward,
                     [](const Tensor& g, const Tensor& t) {
                       return sigmoid_backward(g, sigmoid_forward(t));
                     },
                     s);
  });
  r.run("bilinear_upsample", kOpTolerance, 1e-4, [](std::uint64_t s) {
    return projected(random_tensor({2, 2, 3, 2}, s),
                     [](const Tensor& t) { return bilinear_upsample(t, 8); },
                     [](const Tensor& g, const Tensor&) { return bilinear_upsample_backward(g, 8); },
                     s);
  });
  for (bool sum : {false, true}) {
    const std::string suffix = sum ? "_sum" : "_mean";
    r.run("loss_discriminator" + suffix, kOpTolerance, 1e-4,
          [sum](std::uint64_t s) { return loss_d_case(sum, s); });
    r.run("loss_ce" + suffix, kOpTolerance, 1e-4,
          [sum](std::uint64_t s) { return loss_ce_case(sum, s); });
    r.run("loss_adv" + suffix, kOpTolerance, 1e-4,
          [sum](std::uint64_t s) { return loss_adv_case(sum, s); });
  }
  r.run("mean_field_t1", kOpTolerance, 1e-4, [](std::uint64_t s) { return crf_case(1, s); });
  r.run("mean_field_t3", kOpTolerance, 1e-4, [](std::uint64_t s) { return crf_case(3, s); });

  // Compositions: smaller steps keep ReLU inputs from crossing zero.
  std::vector<std::unique_ptr<Discriminator>> discs;
  r.run("discriminator", kCompositeTolerance, 1e-6, [&discs](std::uint64_t s) {
    DiscriminatorConfig cfg;
    cfg.channels = {4, 4, 4, 4, 1};
    discs.push_back(std::make_unique<Discriminator>(cfg, 3, s + 1));
    Discriminator* d = discs.back().get();
    const Tensor img = random_tensor({1, 3, 32, 32}, s + 10, 0.0, 1.0);
    GradCheckCase c = network_case(
        *d, d->parameters(), softmax_channels(random_tensor({1, 3, 32, 32}, s + 20, -2.0, 2.0)),
        [d, img](const Tensor& f) { return d->forward(img, f, false); },
        [d](const Tensor& g) { return d->backward(g); },
        random_tensor({1, 1, 1, 1}, s + 30, 0.5, 1.5), s);
    c.max_entries_per_input = 6;
    c.kink_guard = true;
    return c;
  });
  std::vector<std::unique_ptr<SegNet>> nets;
  r.run("segnet", kCompositeTolerance, 1e-5, [&nets](std::uint64_t s) {
    SegNetConfig cfg;
    cfg.num_classes = 3;
    cfg.base_channels = 2;
    cfg.blocks_per_stage = {1, 1, 1, 1};
    nets.push_back(std::make_unique<SegNet>(cfg, s + 1));
    SegNet* net = nets.back().get();
    auto all = net->parameters();
    std::vector<Parameter*> picks = {all[0], all[3], all[all.size() / 2], all[all.size() - 2]};
    GradCheckCase c = network_case(
        *net, picks, random_tensor({2, 3, 16, 16}, s + 50, 0.0, 1.0),
        [net](const Tensor& x) { return net->forward(x, Mode::Train).prob; },
        [net](const Tensor& g) { return net->backward(g); },
        random_tensor({2, 3, 16, 16}, s + 60), s);
    c.max_entries_per_input = 12;
    c.kink_guard = true;
    return c;
  });
  return r.rows;
}

bool all_passed(const std::vector<GradSuiteRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const GradSuiteRow& r) { return r.passed(); });
}

}  // namespace seggan
