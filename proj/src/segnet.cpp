#include "seggan/segnet.hpp"

#include <string>

#include "seggan/error.hpp"

namespace seggan {

namespace {
constexpr int kOutputStride = 8;
constexpr double kClassifierInitStd = 0.01;
constexpr std::array<int, 4> kStageWidth{1, 2, 4, 4};
constexpr std::array<int, 4> kStageStride{2, 2, 1, 1};
}  // namespace

int SegNetConfig::stage_channels(int stage) const {
  return base_channels * kStageWidth[stage];
}

void SegNetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("segnet: num_classes must be >= 2");
  if (base_channels < 1) throw ConfigError("segnet: base_channels must be >= 1");
  for (int b : blocks_per_stage) {
    if (b < 1) throw ConfigError("segnet: blocks_per_stage entries must be >= 1");
  }
  for (int d : dilations) {
    if (d < 1) throw ConfigError("segnet: dilations must be >= 1");
  }
  if (aspp_rates.empty()) throw ConfigError("segnet: aspp_rates must not be empty");
  for (int r : aspp_rates) {
    if (r < 1) throw ConfigError("segnet: aspp rates must be >= 1");
  }
}

ResidualBlock::ResidualBlock(const std::string& name, int in_channels,
                             int out_channels, int stride, int dilation)
    : conv1_(name + ".conv1",
             {in_channels, out_channels, 3, stride, dilation, dilation}, false),
      bn1_(name + ".bn1", out_channels),
      conv2_(name + ".conv2",
             {out_channels, out_channels, 3, 1, dilation, dilation}, false),
      bn2_(name + ".bn2", out_channels) {
  if (in_channels != out_channels || stride != 1) {
    projection_ = std::make_unique<Conv2dLayer>(
        name + ".proj", ConvSpec{in_channels, out_channels, 1, stride, 0, 1},
        false);
  }
}

void ResidualBlock::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  if (projection_) projection_->init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  pre_relu_ = bn1_.forward(conv1_.forward(x), mode);
  Tensor branch = bn2_.forward(conv2_.forward(relu_forward(pre_relu_)), mode);
  if (projection_) {
    branch += projection_->forward(x);
  } else {
    branch += x;
  }
  return branch;
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  Tensor g = bn2_.backward(grad_out);
  g = conv2_.backward(g);
  g = relu_backward(g, pre_relu_);
  g = bn1_.backward(g);
  g = conv1_.backward(g);
  if (projection_) {
    g += projection_->backward(grad_out);
  } else {
    g += grad_out;
  }
  return g;
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (projection_) projection_->collect(out);
}

void ResidualBlock::collect(std::vector<Buffer>& out) {
  bn1_.collect(out);
  bn2_.collect(out);
}

Aspp::Aspp(const std::string& name, int in_channels, int num_classes,
           const std::vector<int>& rates) {
  if (rates.empty()) throw ConfigError("aspp: empty rate list");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    branches_.emplace_back(name + ".rate" + std::to_string(rates[i]) + "_" +
                               std::to_string(i),
                           ConvSpec{in_channels, num_classes, 3, 1, rates[i],
                                    rates[i]},
                           true);
  }
}

void Aspp::init(Rng& rng) {
  for (auto& b : branches_) {
    b.init(rng);
    for (double& v : b.weight().value.data()) v = kClassifierInitStd * rng.normal();
  }
}

Tensor Aspp::forward(const Tensor& x) {
  Tensor out = branches_.front().forward(x);
  for (std::size_t i = 1; i < branches_.size(); ++i) {
    out += branches_[i].forward(x);
  }
  return out;
}

Tensor Aspp::backward(const Tensor& grad_out) {
  Tensor g = branches_.front().backward(grad_out);
  for (std::size_t i = 1; i < branches_.size(); ++i) {
    g += branches_[i].backward(grad_out);
  }
  return g;
}

void Aspp::collect(std::vector<Parameter*>& out) {
  for (auto& b : branches_) b.collect(out);
}

SegNet::SegNet(const SegNetConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  const int base = config_.base_channels;
  stem_conv_ = Conv2dLayer("stem.conv", {3, base, 3, 2, 1, 1}, false);
  stem_bn_ = BatchNormLayer("stem.bn", base);
  int in = base;
  for (int s = 0; s < 4; ++s) {
    const int out = config_.stage_channels(s);
    const int dilation = s < 2 ? 1 : config_.dilations[s - 2];
    for (int b = 0; b < config_.blocks_per_stage[s]; ++b) {
      blocks_.emplace_back(
          "stage" + std::to_string(s + 1) + ".block" + std::to_string(b), in,
          out, b == 0 ? kStageStride[s] : 1, dilation);
      in = out;
    }
  }
  aspp_ = std::make_unique<Aspp>("aspp", in, config_.num_classes,
                                 config_.aspp_rates);
  Rng rng(seed);
  stem_conv_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  aspp_->init(rng);
}

SegNetOutput SegNet::forward(const Tensor& image, Mode mode) {
  if (image.c() != 3) {
    throw ConfigError("segnet: expected 3-channel image, got " +
                      image.shape().str());
  }
  if (image.h() % kOutputStride != 0 || image.w() % kOutputStride != 0 ||
      image.h() == 0 || image.w() == 0) {
    throw ConfigError("segnet: input size " + image.shape().str() +
                      " not divisible by 8");
  }
  stem_pre_relu_ = stem_bn_.forward(stem_conv_.forward(image), mode);
  Tensor x = relu_forward(stem_pre_relu_);
  for (auto& b : blocks_) x = b.forward(x, mode);
  SegNetOutput out;
  out.logits = aspp_->forward(x);
  out.prob = softmax_channels(bilinear_upsample(out.logits, kOutputStride));
  prob_ = out.prob;
  return out;
}

Tensor SegNet::backward(const Tensor& grad_prob) {
  Tensor g = softmax_channels_backward(grad_prob, prob_);
  g = bilinear_upsample_backward(g, kOutputStride);
  g = aspp_->backward(g);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    g = it->backward(g);
  }
  g = relu_backward(g, stem_pre_relu_);
  g = stem_bn_.backward(g);
  return stem_conv_.backward(g);
}

std::vector<Parameter*> SegNet::parameters() {
  std::vector<Parameter*> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  aspp_->collect(out);
  return out;
}

std::vector<Buffer> SegNet::buffers() {
  std::vector<Buffer> out;
  stem_bn_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  return out;
}

std::size_t SegNet::parameter_count() { return count_scalars(parameters()); }

SegNet build_segnet(const SegNetConfig& config, std::uint64_t seed) {
  return SegNet(config, seed);
}

}  // namespace seggan
