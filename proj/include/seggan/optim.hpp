#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seggan/tensor.hpp"

namespace seggan {

/// base_lr · (1 − iteration/max_iterations)^power
double poly_lr(double base_lr, long iteration, long max_iterations, double power);

/// Nesterov SGD with L2 weight decay folded into the gradient:
///   g' = g + wd·p (skipped for decay_exempt), v ← m·v + g', p ← p − lr·(g' + m·v)
class SgdNesterov {
 public:
  SgdNesterov(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Parameter*>& params, double lr);
  /// Number of parameters that received weight decay in the last step.
  std::size_t decayed_last_step() const { return decayed_; }

  std::vector<std::vector<double>>& velocity() { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
  std::size_t decayed_ = 0;
};

/// Bias-corrected Adam.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params, double lr);

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<std::vector<double>>& first_moment() { return m_; }
  std::vector<std::vector<double>>& second_moment() { return v_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace seggan
