#include "seggan/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>

#include "seggan/error.hpp"

namespace seggan {

ConfusionMatrix::ConfusionMatrix(int classes)
    : num_classes(classes),
      counts(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw ConfigError("confusion matrix class counts differ");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
    throw ConfigError("accumulate: prediction and truth sizes differ");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth.values[i];
    if (t == kIgnoreLabel) continue;
    const int p = pred.values[i];
    if (t >= cm.num_classes || p >= cm.num_classes) {
      throw InputError("accumulate: label " + std::to_string(std::max(t, p)) +
                       " out of range for " + std::to_string(cm.num_classes) +
                       " classes");
    }
    ++cm.at(t, p);
  }
}

ClassIou per_class_iou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes;
  ClassIou out;
  out.iou.assign(c, 0.0);
  out.defined.assign(c, false);
  for (int i = 0; i < c; ++i) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    const std::uint64_t uni = row + col - cm.at(i, i);
    if (uni == 0) continue;
    out.defined[i] = true;
    out.iou[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(uni);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  const ClassIou iou = per_class_iou(cm);
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < iou.iou.size(); ++i) {
    if (!iou.defined[i]) continue;
    sum += iou.iou[i];
    ++count;
  }
  if (count == 0) throw InputError("miou: confusion matrix is empty");
  return sum / count;
}

LabelMap predict_labels(const Tensor& prob) {
  if (prob.c() < 1 || prob.c() > 255) {
    throw ConfigError("predict_labels: channel count must lie in [1, 255]");
  }
  LabelMap out(prob.n(), prob.h(), prob.w());
  const std::size_t plane = prob.shape().plane();
  for (int n = 0; n < prob.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      double best_v = prob.plane(n, 0)[p];
      for (int c = 1; c < prob.c(); ++c) {
        const double v = prob.plane(n, c)[p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.values[n * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

void write_iou_report(const std::string& path, const ConfusionMatrix& cm) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write report " + path);
  const ClassIou iou = per_class_iou(cm);
  f << "class,iou\n" << std::setprecision(17);
  for (int i = 0; i < cm.num_classes; ++i) {
    f << i << ',';
    if (iou.defined[i]) {
      f << iou.iou[i];
    } else {
      f << "nan";
    }
    f << '\n';
  }
  f << "miou," << miou(cm) << '\n';
}

}  // namespace seggan
