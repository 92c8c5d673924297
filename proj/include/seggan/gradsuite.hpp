#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seggan {

struct GradSuiteRow {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries_checked = 0;
  /// Entries dropped because the step crossed a kink; at most 5% allowed.
  std::size_t entries_skipped = 0;
  int seeds = 0;
  bool passed() const {
    return max_rel_error <= tolerance && entries_checked > 0 &&
           entries_skipped * 20 <= entries_checked + entries_skipped;
  }
};

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  int num_seeds = 5;
  /// Scales one analytic conv weight gradient by 1.1 (negative control).
  bool inject_fault = false;
};

/// Central-difference checks of every differentiable operation, one row per
/// operation with the worst relative error over all seeds.
std::vector<GradSuiteRow> run_grad_suite(const GradSuiteOptions& options);

bool all_passed(const std::vector<GradSuiteRow>& rows);

}  // namespace seggan
