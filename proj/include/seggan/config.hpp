#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "json.hpp"
#include "seggan/datasets.hpp"
#include "seggan/discriminator.hpp"
#include "seggan/losses.hpp"
#include "seggan/segnet.hpp"

namespace seggan {

struct SegOptimizerConfig {
  double base_lr = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
};

struct DiscOptimizerConfig {
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double poly_power = 0.9;
};

struct TrainConfig {
  double lambda = 0.01;
  long max_iterations = 3000;
  int batch_size = 4;
  int crop_size = 64;
  std::pair<double, double> scale_range{0.75, 1.25};
  /// Toy default 0.01; the full-scale preset uses 2.5e-4.
  SegOptimizerConfig seg_optimizer{.base_lr = 0.01};
  DiscOptimizerConfig disc_optimizer;
  long eval_every = 250;
  /// 0 writes only the final checkpoint.
  long checkpoint_every = 0;
  std::uint64_t seed = 0;

  /// Desk-scale preset (the defaults above).
  static TrainConfig toy();
  /// Full-scale optimisation settings.
  static TrainConfig full_scale();
  void validate() const;
};

struct DataConfig {
  /// Dataset directory with a manifest; empty means generate `shapes` in memory.
  std::string root;
  ShapesConfig shapes;
};

struct RunConfig {
  SegNetConfig segnet;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  LossConfig loss;
  DataConfig data;

  /// Loss settings with the training λ applied.
  LossConfig loss_config() const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Every key optional; unknown keys throw ConfigError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace seggan
