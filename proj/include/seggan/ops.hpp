#pragma once

#include <span>
#include <vector>

#include "seggan/tensor.hpp"

namespace seggan {

/// Geometry of a square-kernel 2-D convolution (cross-correlation, no flip).
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  /// floor((size + 2*padding - dilation*(kernel-1) - 1) / stride) + 1
  int output_size(int size) const;
  Shape output_shape(const Shape& input) const;
  void validate() const;
};

struct ConvGrads {
  Tensor input;
  Tensor weight;
  std::vector<double> bias;
};

/// `bias` may be empty. Weight layout is [out, in, k, k].
Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      std::span<const double> bias, const ConvSpec& spec);
ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                          const Tensor& weight, const ConvSpec& spec);

Tensor leaky_relu_forward(const Tensor& x, double slope);
/// d/dx is 1 for x > 0 and `slope` for x <= 0.
Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& x,
                           double slope);
Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);

enum class Mode { Train, Eval };

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormStats(int channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

struct BatchNormCache {
  Mode mode = Mode::Train;
  Tensor normalized;
  std::vector<double> inv_std;
};

struct BatchNormGrads {
  Tensor input;
  std::vector<double> scale;
  std::vector<double> shift;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Train mode normalizes over (N, H, W) per channel and updates `stats`
/// (running variance uses the unbiased estimate). Eval mode reads `stats`.
Tensor batch_norm_forward(const Tensor& x, std::span<const double> scale,
                          std::span<const double> shift, BatchNormStats& stats,
                          Mode mode, BatchNormCache* cache,
                          double momentum = kBatchNormMomentum,
                          double epsilon = kBatchNormEpsilon);
BatchNormGrads batch_norm_backward(const Tensor& grad_out,
                                   const BatchNormCache& cache,
                                   std::span<const double> scale);

/// Per-pixel softmax across the channel axis.
Tensor softmax_channels(const Tensor& x);
/// Backward given the forward output `y`.
Tensor softmax_channels_backward(const Tensor& grad_out, const Tensor& y);

Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y);

/// Bilinear resize by an integer factor, half-pixel sample centers
/// (align_corners = false), edge-clamped.
Tensor bilinear_upsample(const Tensor& x, int factor);
Tensor bilinear_upsample_backward(const Tensor& grad_out, int factor);

}  // namespace seggan
