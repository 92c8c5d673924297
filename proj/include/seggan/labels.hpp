#pragma once

#include <cstdint>
#include <vector>

#include "seggan/tensor.hpp"

namespace seggan {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Integer class per pixel, shape [N, H, W]; values in [0, C) or 255.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(int n, int h, int w, std::uint8_t fill = 0)
      : n(n), h(h), w(w), values(static_cast<std::size_t>(n) * h * w, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::uint8_t& at(int i, int y, int x) {
    return values[(static_cast<std::size_t>(i) * h + y) * w + x];
  }
  std::uint8_t at(int i, int y, int x) const {
    return values[(static_cast<std::size_t>(i) * h + y) * w + x];
  }
  LabelMap slice(int i) const;
  void set_slice(int i, const LabelMap& one);
  bool operator==(const LabelMap&) const = default;
};

/// Throws InputError if any value is outside [0, C) ∪ {255}.
void validate_labels(const LabelMap& labels, int num_classes);

/// True class gets 1 - s(C-1)/C, others s/C; ignore pixels become uniform.
Tensor one_hot_encode(const LabelMap& labels, int num_classes,
                      double smoothing);

}  // namespace seggan
