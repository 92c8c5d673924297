#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "seggan/layers.hpp"

namespace seggan {

/// Residual encoder with output stride 8, dilated last two stages, and an
/// ASPP classifier.
struct SegNetConfig {
  int num_classes = 4;
  int base_channels = 16;
  std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
  std::array<int, 2> dilations{2, 4};
  std::vector<int> aspp_rates{2, 4, 8};

  /// Channel width of stage s: base × {1, 2, 4, 4}.
  int stage_channels(int stage) const;
  void validate() const;
};

/// conv3x3(stride, dilation) → BN → ReLU → conv3x3(dilation) → BN, plus an
/// identity skip or a 1×1 projection when stride or width changes.
class ResidualBlock {
 public:
  ResidualBlock(const std::string& name, int in_channels, int out_channels,
                int stride, int dilation);

  void init(Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<Buffer>& out);

  bool has_projection() const { return projection_ != nullptr; }
  Conv2dLayer* projection() { return projection_.get(); }
  BatchNormLayer& last_norm() { return bn2_; }

 private:
  Conv2dLayer conv1_;
  BatchNormLayer bn1_;
  Conv2dLayer conv2_;
  BatchNormLayer bn2_;
  std::unique_ptr<Conv2dLayer> projection_;
  Tensor pre_relu_;
};

/// Parallel 3×3 dilated convolutions (padding = rate) summed elementwise.
class Aspp {
 public:
  Aspp(const std::string& name, int in_channels, int num_classes,
       const std::vector<int>& rates);

  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  std::vector<Conv2dLayer>& branches() { return branches_; }

 private:
  std::vector<Conv2dLayer> branches_;
};

struct SegNetOutput {
  Tensor prob;    // [N, C, H, W]
  Tensor logits;  // [N, C, H/8, W/8]
};

class SegNet {
 public:
  SegNet(const SegNetConfig& config, std::uint64_t seed);

  /// Image [N,3,H,W] with H, W divisible by 8. Caches for backward.
  SegNetOutput forward(const Tensor& image, Mode mode);
  /// Gradient w.r.t. the probability map of the last forward. Accumulates
  /// parameter gradients and returns the image gradient.
  Tensor backward(const Tensor& grad_prob);

  std::vector<Parameter*> parameters();
  std::vector<Buffer> buffers();
  std::size_t parameter_count();
  const SegNetConfig& config() const { return config_; }

 private:
  SegNetConfig config_;
  Conv2dLayer stem_conv_;
  BatchNormLayer stem_bn_;
  std::vector<ResidualBlock> blocks_;
  std::unique_ptr<Aspp> aspp_;
  Tensor stem_pre_relu_;
  Tensor prob_;
};

/// Deterministic construction from (config, seed).
SegNet build_segnet(const SegNetConfig& config, std::uint64_t seed);

}  // namespace seggan
