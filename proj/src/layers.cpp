#include "seggan/layers.hpp"

#include <cmath>

namespace seggan {

Conv2dLayer::Conv2dLayer(const std::string& name, ConvSpec spec, bool with_bias)
    : spec_(spec), has_bias_(with_bias) {
  spec_.validate();
  weight_.name = name + ".weight";
  weight_.value = Tensor(
      {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  if (has_bias_) {
    bias_.name = name + ".bias";
    bias_.value = Tensor({1, 1, 1, spec.out_channels});
    bias_.decay_exempt = true;
  }
}

void Conv2dLayer::init(Rng& rng) {
  const double fan_in =
      static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
  const double std = std::sqrt(2.0 / fan_in);
  for (double& v : weight_.value.data()) v = std * rng.normal();
  if (has_bias_) bias_.value.fill(0.0);
}

Tensor Conv2dLayer::forward(const Tensor& x) {
  input_ = x;
  return conv2d_forward(x, weight_.value,
                        has_bias_ ? bias_.value.data() : std::span<const double>{},
                        spec_);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out) {
  ConvGrads g = conv2d_backward(grad_out, input_, weight_.value, spec_);
  auto& gw = weight_.value.grad();
  for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += g.weight[i];
  if (has_bias_) {
    auto& gb = bias_.value.grad();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g.bias[i];
  }
  return std::move(g.input);
}

void Conv2dLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

BatchNormLayer::BatchNormLayer(const std::string& name, int channels)
    : name_(name), stats_(channels) {
  scale_.name = name + ".scale";
  scale_.value = Tensor({1, 1, 1, channels}, 1.0);
  scale_.decay_exempt = true;
  shift_.name = name + ".shift";
  shift_.value = Tensor({1, 1, 1, channels}, 0.0);
  shift_.decay_exempt = true;
}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
  return batch_norm_forward(x, scale_.value.data(), shift_.value.data(), stats_,
                            mode, &cache_);
}

Tensor BatchNormLayer::backward(const Tensor& grad_out) {
  BatchNormGrads g = batch_norm_backward(grad_out, cache_, scale_.value.data());
  auto& gs = scale_.value.grad();
  auto& gb = shift_.value.grad();
  for (std::size_t i = 0; i < gs.size(); ++i) {
    gs[i] += g.scale[i];
    gb[i] += g.shift[i];
  }
  return std::move(g.input);
}

void BatchNormLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&scale_);
  out.push_back(&shift_);
}

void BatchNormLayer::collect(std::vector<Buffer>& out) {
  out.push_back({name_ + ".running_mean", &stats_.running_mean});
  out.push_back({name_ + ".running_var", &stats_.running_var});
}

std::size_t count_scalars(const std::vector<Parameter*>& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->value.zero_grad();
}

}  // namespace seggan
