#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "seggan/tensor.hpp"

namespace seggan {

/// A differentiable computation reduced to a scalar, together with its
/// hand-written gradient with respect to every input tensor.
struct GradCheckCase {
  std::vector<Tensor> inputs;
  std::function<double(const std::vector<Tensor>&)> value;
  std::function<std::vector<Tensor>(const std::vector<Tensor>&)> gradient;
  /// Optional: return true to exclude entry `index` of input `which`.
  std::function<bool(std::size_t which, std::size_t index)> skip;
  /// Per-input cap on checked entries (0 = all). Subsets are drawn
  /// deterministically from `sample_seed`.
  std::size_t max_entries_per_input = 0;
  std::uint64_t sample_seed = 0;
  /// Five-point central stencil, O(h^4) truncation error.
  bool five_point = false;
  /// Smallest denominator of the relative error.
  double denominator_floor = 1e-8;
  /// Skip entries whose one-sided differences disagree by more than
  /// kink_threshold (relative): the step crossed a non-differentiable point.
  /// The analytic gradient plays no part in this test.
  bool kink_guard = false;
  double kink_threshold = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t entries_skipped = 0;
};

/// Central differences (f(x+h) - f(x-h)) / 2h with h = epsilon * max(1, |x|),
/// compared against the analytic gradient. Relative error of an entry is
/// |a - b| / max(|a|, |b|, denominator_floor).
GradCheckResult grad_check(const GradCheckCase& c, double epsilon = 1e-4);

/// Random tensor with entries uniform in [lo, hi), deterministic in `seed`.
Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0);

/// Σ a_i b_i over equally-shaped tensors.
double dot(const Tensor& a, const Tensor& b);

}  // namespace seggan
