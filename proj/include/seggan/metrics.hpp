#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seggan/labels.hpp"
#include "seggan/tensor.hpp"

namespace seggan {

/// counts[t·C + p]: pixels of true class t predicted as p.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  std::uint64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * num_classes + pred];
  }
  std::uint64_t& at(int truth, int pred) {
    return counts[static_cast<std::size_t>(truth) * num_classes + pred];
  }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Adds one count per pixel; pixels whose truth is the ignore label are skipped.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth);

struct ClassIou {
  std::vector<double> iou;
  /// false where the union is empty (class absent from truth and prediction).
  std::vector<bool> defined;
};

ClassIou per_class_iou(const ConfusionMatrix& cm);

/// Mean over defined classes. Throws InputError when no class is defined.
double miou(const ConfusionMatrix& cm);

/// Per-pixel argmax over channels; ties go to the lowest class index.
LabelMap predict_labels(const Tensor& prob);

/// `class,iou` rows (undefined classes written as `nan`) then `miou,<value>`.
void write_iou_report(const std::string& path, const ConfusionMatrix& cm);

}  // namespace seggan
