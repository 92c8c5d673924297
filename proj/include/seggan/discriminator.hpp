#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "seggan/convcrf.hpp"
#include "seggan/layers.hpp"

namespace seggan {

struct DiscriminatorConfig {
  std::array<int, 5> channels{8, 16, 32, 64, 1};
  int kernel = 3;
  int stride = 2;
  double leaky_slope = 0.2;
  int num_crf_modules = 4;
  ConvCrfConfig crf = ConvCrfConfig::defaults(3, 3);
  double label_smoothing = 0.1;

  /// Channel widths used by the full-size network.
  static DiscriminatorConfig full_scale();
  void validate() const;
  /// Spatial reduction of the conv stack (stride^5).
  int output_stride() const;
};

/// Cascaded ConvCRF refinement of a label field, conditioned on the image,
/// followed by a strided fully-convolutional scorer and a sigmoid.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, int num_classes,
                std::uint64_t seed);

  /// image [N,3,H,W] in [0,1]; label_field [N,C,H,W], a distribution per
  /// pixel. Returns the confidence map [N,1,H/32,W/32]. Caches for backward.
  Tensor forward(const Tensor& image, const Tensor& label_field,
                 bool validate_input = true);
  /// Accumulates parameter gradients, returns d/d label_field.
  Tensor backward(const Tensor& grad_conf);

  std::vector<Parameter*> parameters();
  /// Trainable parameters plus frozen CRF parameters (for checkpoints).
  std::vector<Parameter*> all_parameters();
  const DiscriminatorConfig& config() const { return config_; }
  int num_classes() const { return num_classes_; }

  /// Per-module CRF parameters in effect (learnable or fixed).
  CrfParams crf_params(int module) const;
  void set_crf_params(int module, const CrfParams& params);
  std::vector<Conv2dLayer>& conv_layers() { return convs_; }

  /// Stage names executed by the last forward, in order.
  const std::vector<std::string>& trace() const { return trace_; }

 private:
  struct SampleState {
    GaussianKernelStack kernels;
    std::vector<ConvCrfCache> caches;
  };

  DiscriminatorConfig config_;
  int num_classes_;
  std::vector<Parameter> compat_;
  std::vector<Parameter> kernel_weights_;
  std::vector<Conv2dLayer> convs_;
  std::vector<Tensor> pre_activation_;
  Tensor output_;
  std::vector<SampleState> samples_;
  std::vector<std::string> trace_;
};

}  // namespace seggan
