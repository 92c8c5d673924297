#include "seggan/labels.hpp"

#include <string>

#include "seggan/error.hpp"

namespace seggan {

LabelMap LabelMap::slice(int i) const {
  LabelMap out(1, h, w);
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(i * plane()),
              plane(), out.values.begin());
  return out;
}

void LabelMap::set_slice(int i, const LabelMap& one) {
  if (one.h != h || one.w != w || one.n != 1) {
    throw ConfigError("LabelMap::set_slice: size mismatch");
  }
  std::copy(one.values.begin(), one.values.end(),
            values.begin() + static_cast<std::ptrdiff_t>(i * plane()));
}

void validate_labels(const LabelMap& labels, int num_classes) {
  for (std::uint8_t v : labels.values) {
    if (v != kIgnoreLabel && v >= num_classes) {
      throw InputError("label value " + std::to_string(v) +
                       " out of range for " + std::to_string(num_classes) +
                       " classes");
    }
  }
}

Tensor one_hot_encode(const LabelMap& labels, int num_classes,
                      double smoothing) {
  if (num_classes < 1) throw ConfigError("one_hot_encode: num_classes < 1");
  if (smoothing < 0.0 || smoothing >= 0.5) {
    throw ConfigError("one_hot_encode: smoothing must lie in [0, 0.5)");
  }
  validate_labels(labels, num_classes);
  const double off = smoothing / num_classes;
  const double on = 1.0 - off * (num_classes - 1);
  const double uniform = 1.0 / num_classes;
  Tensor out({labels.n, num_classes, labels.h, labels.w});
  const std::size_t plane = labels.plane();
  for (int n = 0; n < labels.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t v = labels.values[n * plane + p];
      for (int c = 0; c < num_classes; ++c) {
        double value;
        if (v == kIgnoreLabel) {
          value = uniform;
        } else {
          value = c == v ? on : off;
        }
        out.plane(n, c)[p] = value;
      }
    }
  }
  return out;
}

}  // namespace seggan
