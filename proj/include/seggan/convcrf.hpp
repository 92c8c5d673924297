#pragma once

#include <array>
#include <vector>

#include "seggan/tensor.hpp"

namespace seggan {

/// Floor applied before taking logs of probabilities (CRF unaries, losses).
inline constexpr double kLogEpsilon = 1e-8;

/// Mean-field hyperparameters of a window-truncated CRF.
struct ConvCrfConfig {
  int filter_size = 3;        // odd window side k
  double theta_alpha = 3.0;   // spatial bandwidth of the appearance kernel
  double theta_beta = 0.15;   // colour bandwidth of the appearance kernel
  double theta_gamma = 1.5;   // spatial bandwidth of the smoothness kernel
  int iterations = 3;
  bool learnable_compat = true;
  bool learnable_kernel_weights = true;

  /// Bandwidth defaults for window size k: alpha = k, beta = 0.15,
  /// gamma = k / 2.
  static ConvCrfConfig defaults(int filter_size, int iterations);
  void validate() const;
};

/// Per-pixel Gaussian weights for every offset of the k×k window, stored as
/// [k·k, H, W]. Offset m = (dy + r)·k + (dx + r), r = k / 2. The centre
/// offset and offsets leaving the image are 0.
struct GaussianKernelStack {
  int filter_size = 0;
  int height = 0;
  int width = 0;
  std::vector<double> appearance;
  std::vector<double> smoothness;

  int radius() const { return filter_size / 2; }
  std::size_t offsets() const {
    return static_cast<std::size_t>(filter_size) * filter_size;
  }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  double appearance_at(int m, int y, int x) const {
    return appearance[m * pixels() + static_cast<std::size_t>(y) * width + x];
  }
  double smoothness_at(int m, int y, int x) const {
    return smoothness[m * pixels() + static_cast<std::size_t>(y) * width + x];
  }
};

/// Compatibility μ (row-major, `compat[from * C + to]` = μ(from, to)) and the
/// appearance / smoothness mixture weights.
struct CrfParams {
  int num_classes = 0;
  std::vector<double> compat;
  std::array<double, 2> kernel_weights{1.0, 1.0};

  /// μ(c', c) = 1 - δ(c', c), weights 1.
  static CrfParams potts(int num_classes);
  double mu(int from, int to) const { return compat[from * num_classes + to]; }
};

GaussianKernelStack build_gaussian_kernels(const Tensor& image,
                                           const ConvCrfConfig& config);

/// M_i(c) = Σ_kernels w · Σ_{j in window(i), j != i} k(i, j) Q_j(c).
Tensor message_pass(const Tensor& q, const GaussianKernelStack& kernels,
                    const CrfParams& params);

/// softmax_c(unary_i(c) - Σ_c' μ(c', c) M_i(c')).
Tensor mean_field_step(const Tensor& unary, const Tensor& q,
                       const GaussianKernelStack& kernels,
                       const CrfParams& params);

/// log(max(p, kLogEpsilon)) elementwise.
Tensor clamped_log(const Tensor& prob);

/// Forward state kept for the unrolled backward pass.
struct ConvCrfCache {
  Tensor prob;
  std::vector<Tensor> iterates;  // Q^0 .. Q^T
};

struct ConvCrfGrads {
  Tensor prob;
  std::vector<double> compat;
  std::array<double, 2> kernel_weights{0.0, 0.0};
};

/// T mean-field steps from Q^0 = prob with unary = log(prob). `prob` is
/// [1, C, H, W].
Tensor convcrf_forward(const Tensor& image, const Tensor& prob,
                       const ConvCrfConfig& config, const CrfParams& params);
Tensor convcrf_forward(const GaussianKernelStack& kernels, const Tensor& prob,
                       const ConvCrfConfig& config, const CrfParams& params,
                       ConvCrfCache* cache);
ConvCrfGrads convcrf_backward(const Tensor& grad_out, const ConvCrfCache& cache,
                              const GaussianKernelStack& kernels,
                              const CrfParams& params);

/// Reference implementation: every pixel pair is visited and the window is
/// applied as a filter; kernels are evaluated on the fly from the image.
Tensor brute_force_oracle(const Tensor& image, const Tensor& prob,
                          const ConvCrfConfig& config, const CrfParams& params);

}  // namespace seggan
