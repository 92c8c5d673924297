#pragma once

#include <string>
#include <vector>

#include "seggan/ops.hpp"
#include "seggan/rng.hpp"
#include "seggan/tensor.hpp"

namespace seggan {

/// Convolution with owned parameters and a cached input for backward.
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, ConvSpec spec, bool with_bias);

  /// Weights ~ N(0, 2 / fan_in), bias 0.
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  /// Accumulates parameter gradients, returns the input gradient.
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  const ConvSpec& spec() const { return spec_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

 private:
  ConvSpec spec_;
  bool has_bias_ = false;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, int channels);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<Buffer>& out);

  Parameter& scale() { return scale_; }
  Parameter& shift() { return shift_; }
  BatchNormStats& stats() { return stats_; }

 private:
  std::string name_;
  Parameter scale_;
  Parameter shift_;
  BatchNormStats stats_;
  BatchNormCache cache_;
};

/// Total number of scalar entries over a parameter list.
std::size_t count_scalars(const std::vector<Parameter*>& params);

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace seggan
