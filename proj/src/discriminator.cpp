#include "seggan/discriminator.hpp"

#include <cmath>

#include "seggan/error.hpp"
#include "seggan/ops.hpp"

namespace seggan {

DiscriminatorConfig DiscriminatorConfig::full_scale() {
  DiscriminatorConfig c;
  c.channels = {64, 128, 256, 512, 1};
  c.crf = ConvCrfConfig::defaults(7, 5);
  return c;
}

void DiscriminatorConfig::validate() const {
  for (int c : channels) {
    if (c < 1) throw ConfigError("discriminator: channel counts must be >= 1");
  }
  if (channels.back() != 1) {
    throw ConfigError("discriminator: last channel count must be 1");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("discriminator: kernel must be odd");
  }
  if (stride < 1) throw ConfigError("discriminator: stride must be >= 1");
  if (leaky_slope < 0.0 || leaky_slope >= 1.0) {
    throw ConfigError("discriminator: leaky_slope must lie in [0, 1)");
  }
  if (num_crf_modules < 0) {
    throw ConfigError("discriminator: num_crf_modules must be >= 0");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 0.5) {
    throw ConfigError("discriminator: label_smoothing must lie in [0, 0.5)");
  }
  crf.validate();
}

int DiscriminatorConfig::output_stride() const {
  int s = 1;
  for (std::size_t i = 0; i < channels.size(); ++i) s *= stride;
  return s;
}

Discriminator::Discriminator(const DiscriminatorConfig& config,
                             int num_classes, std::uint64_t seed)
    : config_(config), num_classes_(num_classes) {
  config_.validate();
  if (num_classes < 2) throw ConfigError("discriminator: num_classes must be >= 2");
  const CrfParams potts = CrfParams::potts(num_classes);
  for (int m = 0; m < config_.num_crf_modules; ++m) {
    Parameter compat;
    compat.name = "crf" + std::to_string(m) + ".compat";
    compat.value = Tensor({1, 1, num_classes, num_classes}, potts.compat);
    compat.decay_exempt = true;
    compat_.push_back(std::move(compat));
    Parameter weights;
    weights.name = "crf" + std::to_string(m) + ".kernel_weights";
    weights.value = Tensor({1, 1, 1, 2}, 1.0);
    weights.decay_exempt = true;
    kernel_weights_.push_back(std::move(weights));
  }
  int in = num_classes;
  const int pad = config_.kernel / 2;
  for (int i = 0; i < 5; ++i) {
    convs_.emplace_back("conv" + std::to_string(i),
                        ConvSpec{in, config_.channels[i], config_.kernel,
                                 config_.stride, pad, 1},
                        true);
    in = config_.channels[i];
  }
  Rng rng(seed);
  for (auto& c : convs_) c.init(rng);
}

CrfParams Discriminator::crf_params(int module) const {
  CrfParams p;
  p.num_classes = num_classes_;
  p.compat = compat_[module].value.vec();
  p.kernel_weights = {kernel_weights_[module].value[0],
                      kernel_weights_[module].value[1]};
  return p;
}

void Discriminator::set_crf_params(int module, const CrfParams& params) {
  compat_[module].value.vec() = params.compat;
  kernel_weights_[module].value[0] = params.kernel_weights[0];
  kernel_weights_[module].value[1] = params.kernel_weights[1];
}

Tensor Discriminator::forward(const Tensor& image, const Tensor& label_field,
                              bool validate_input) {
  const int stride = config_.output_stride();
  if (image.c() != 3 || label_field.c() != num_classes_ ||
      image.n() != label_field.n() || image.h() != label_field.h() ||
      image.w() != label_field.w()) {
    throw ConfigError("discriminator: image " + image.shape().str() +
                      " and label field " + label_field.shape().str() +
                      " do not match");
  }
  if (image.h() % stride != 0 || image.w() % stride != 0 || image.h() == 0 ||
      image.w() == 0) {
    throw ConfigError("discriminator: input size " + image.shape().str() +
                      " not divisible by " + std::to_string(stride));
  }
  if (validate_input) {
    const std::size_t plane = label_field.shape().plane();
    for (int n = 0; n < label_field.n(); ++n) {
      for (std::size_t p = 0; p < plane; ++p) {
        double s = 0.0;
        for (int c = 0; c < num_classes_; ++c) {
          const double v = label_field.plane(n, c)[p];
          if (!(v >= 0.0)) {
            throw InputError("discriminator: negative or NaN label field entry");
          }
          s += v;
        }
        if (std::abs(s - 1.0) > 1e-6) {
          throw InputError("discriminator: label field is not a distribution");
        }
      }
    }
  }

  trace_.clear();
  samples_.assign(label_field.n(), {});
  Tensor refined = label_field;
  for (int n = 0; n < label_field.n(); ++n) {
    SampleState& st = samples_[n];
    st.kernels = build_gaussian_kernels(image.slice(n), config_.crf);
    st.caches.resize(config_.num_crf_modules);
    Tensor q = label_field.slice(n);
    for (int m = 0; m < config_.num_crf_modules; ++m) {
      q = convcrf_forward(st.kernels, q, config_.crf, crf_params(m),
                          &st.caches[m]);
      if (n == 0) trace_.push_back("crf" + std::to_string(m));
    }
    refined.set_slice(n, q);
  }

  pre_activation_.clear();
  Tensor x = refined;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = convs_[i].forward(x);
    trace_.push_back("conv" + std::to_string(i));
    if (i + 1 < convs_.size()) {
      pre_activation_.push_back(x);
      x = leaky_relu_forward(x, config_.leaky_slope);
    }
  }
  output_ = sigmoid_forward(x);
  trace_.push_back("sigmoid");
  return output_;
}

Tensor Discriminator::backward(const Tensor& grad_conf) {
  Tensor g = sigmoid_backward(grad_conf, output_);
  for (std::size_t i = convs_.size(); i-- > 0;) {
    if (i + 1 < convs_.size()) {
      g = leaky_relu_backward(g, pre_activation_[i], config_.leaky_slope);
    }
    g = convs_[i].backward(g);
  }

  Tensor grad_field(g.shape());
  for (int n = 0; n < g.n(); ++n) {
    SampleState& st = samples_[n];
    Tensor gq = g.slice(n);
    for (int m = config_.num_crf_modules - 1; m >= 0; --m) {
      ConvCrfGrads cg = convcrf_backward(gq, st.caches[m], st.kernels,
                                         crf_params(m));
      auto& gc = compat_[m].value.grad();
      for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += cg.compat[i];
      auto& gw = kernel_weights_[m].value.grad();
      gw[0] += cg.kernel_weights[0];
      gw[1] += cg.kernel_weights[1];
      gq = std::move(cg.prob);
    }
    grad_field.set_slice(n, gq);
  }
  return grad_field;
}

std::vector<Parameter*> Discriminator::parameters() {
  std::vector<Parameter*> out;
  for (int m = 0; m < config_.num_crf_modules; ++m) {
    if (config_.crf.learnable_compat) out.push_back(&compat_[m]);
    if (config_.crf.learnable_kernel_weights) out.push_back(&kernel_weights_[m]);
  }
  for (auto& c : convs_) c.collect(out);
  return out;
}

std::vector<Parameter*> Discriminator::all_parameters() {
  std::vector<Parameter*> out;
  for (int m = 0; m < config_.num_crf_modules; ++m) {
    out.push_back(&compat_[m]);
    out.push_back(&kernel_weights_[m]);
  }
  for (auto& c : convs_) c.collect(out);
  return out;
}

}  // namespace seggan
