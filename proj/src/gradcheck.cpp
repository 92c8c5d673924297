#include "seggan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "seggan/rng.hpp"

namespace seggan {

GradCheckResult grad_check(const GradCheckCase& c, double epsilon) {
  std::vector<Tensor> inputs = c.inputs;
  const std::vector<Tensor> analytic = c.gradient(inputs);
  if (analytic.size() != inputs.size()) {
    throw std::logic_error("grad_check: gradient count != input count");
  }
  GradCheckResult result;
  Rng rng(c.sample_seed);
  const double f0 = c.kink_guard ? c.value(inputs) : 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    require_same_shape(analytic[k].shape(), inputs[k].shape(), "grad_check");
    std::vector<std::size_t> idx(inputs[k].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (c.max_entries_per_input > 0 && idx.size() > c.max_entries_per_input) {
      rng.shuffle(idx);
      idx.resize(c.max_entries_per_input);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      if (c.skip && c.skip(k, i)) continue;
      double& x = inputs[k][i];
      const double orig = x;
      const double h = epsilon * std::max(1.0, std::abs(orig));
      auto at = [&](double offset) {
        x = orig + offset;
        const double v = c.value(inputs);
        x = orig;
        return v;
      };
      const double fp = at(h);
      const double fm = at(-h);
      if (c.kink_guard) {
        const double right = (fp - f0) / h;
        const double left = (f0 - fm) / h;
        const double scale = std::max({std::abs(right), std::abs(left), c.denominator_floor});
        if (std::abs(right - left) > c.kink_threshold * scale) {
          ++result.entries_skipped;
          continue;
        }
      }
      double numeric = (fp - fm) / (2.0 * h);
      if (c.five_point) {
        numeric = (4.0 * numeric - (at(2.0 * h) - at(-2.0 * h)) / (4.0 * h)) / 3.0;
      }
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), c.denominator_floor});
      result.max_rel_error =
          std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.entries_checked;
    }
  }
  return result;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(shape);
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace seggan
