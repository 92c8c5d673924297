#pragma once

#include "seggan/labels.hpp"
#include "seggan/tensor.hpp"

namespace seggan {

enum class Reduction { Sum, Mean };

struct LossConfig {
  double lambda = 0.01;
  double epsilon = 1e-8;
  Reduction reduction = Reduction::Mean;
  int ignore_value = kIgnoreLabel;

  void validate() const;
};

/// Loss value with gradients w.r.t. its tensor inputs.
struct LossResult {
  double value = 0.0;
  Tensor grad;        // first tensor argument
  Tensor grad_other;  // second tensor argument, when there is one
  /// Locations that contributed (the divisor under mean reduction).
  std::size_t count = 0;
  /// Set by loss_ce when every pixel is ignored.
  bool all_ignored = false;
};

/// -Σ log(1 - D(fake)) - Σ log D(real) over the confidence-map grid.
/// `grad` is d/d conf_fake, `grad_other` is d/d conf_real.
LossResult loss_discriminator(const Tensor& conf_fake, const Tensor& conf_real,
                              const LossConfig& cfg);

/// -Σ log p(true class) over non-ignored pixels.
LossResult loss_ce(const Tensor& prob, const LabelMap& labels,
                   const LossConfig& cfg);

/// -Σ log D(fake).
LossResult loss_adv(const Tensor& conf_fake, const LossConfig& cfg);

/// l_ce + λ·l_adv
double loss_seg(double l_ce, double l_adv, const LossConfig& cfg);

}  // namespace seggan
