#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seggan/labels.hpp"
#include "seggan/rng.hpp"
#include "seggan/tensor.hpp"

namespace seggan {

struct Sample {
  Tensor image;     // [1,3,H,W] in [0,1]
  LabelMap labels;  // [1,H,W]
  std::string id;
};

struct ShapesConfig {
  int num_samples = 250;
  int image_size = 64;
  /// Background plus up to three shape classes: circle, square, triangle.
  int num_classes = 4;
  int min_shapes = 1;
  int max_shapes = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  int num_classes = 0;
};

/// Deterministic synthetic shapes; the first 80% of indices are train.
Dataset gen_shapes_dataset(const ShapesConfig& cfg);

/// One generated sample, independent of all other indices.
Sample gen_shapes_sample(const ShapesConfig& cfg, int index);

/// 8-bit RGB PNG → [1,3,H,W] with values v/255.
Tensor read_rgb_png(const std::string& path);
void write_rgb_png(const std::string& path, const Tensor& image);
/// 8-bit grayscale or palette PNG → raw indices.
LabelMap read_label_png(const std::string& path);
/// 8-bit grayscale PNG of label indices.
void write_label_png(const std::string& path, const LabelMap& labels);

/// Throws DataError (Unreadable, SizeMismatch, LabelOutOfRange, BadFormat).
Sample load_pair(const std::string& image_path, const std::string& label_path,
                 int num_classes);

/// `<root>/images/<id>.png`, `<root>/labels/<id>.png`, `<root>/manifest.json`.
void write_dataset(const std::string& root, const Dataset& data,
                   const ShapesConfig& cfg);
/// Reads a dataset directory through its manifest.
Dataset load_dataset(const std::string& root);

/// Random scale (bilinear image, nearest labels) then a random crop, padding
/// with zeros / ignore when the scaled sample is smaller than the crop.
Sample augment(const Sample& sample, int crop_size,
               std::pair<double, double> scale_range, Rng& rng);

}  // namespace seggan
