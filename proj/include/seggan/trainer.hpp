#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seggan/config.hpp"
#include "seggan/datasets.hpp"
#include "seggan/discriminator.hpp"
#include "seggan/metrics.hpp"
#include "seggan/optim.hpp"
#include "seggan/segnet.hpp"

namespace seggan {

struct StepReport {
  long iteration = 0;  // 1-based index of the finished step
  double l_d = 0.0;
  double l_ce = 0.0;
  double l_adv = 0.0;
  double l_seg = 0.0;
  double lr_seg = 0.0;
  double lr_disc = 0.0;
};

/// Optional measurements taken inside a step.
struct StepProbe {
  /// L2 norm of all segmentation-network gradients right after the
  /// discriminator update.
  double seg_grad_norm_after_disc_update = 0.0;
  /// Largest absolute change of any discriminator parameter during the
  /// segmentation update.
  double disc_param_change_in_seg_update = 0.0;
  /// Parameters that received weight decay / parameters not exempt from it.
  std::size_t decayed_params = 0;
  std::size_t decayable_params = 0;
};

struct Batch {
  Tensor images;
  LabelMap labels;
};

class Trainer {
 public:
  /// `data` must outlive the trainer.
  Trainer(const RunConfig& config, const Dataset& data);

  /// One D update followed by one S update.
  StepReport step(StepProbe* probe = nullptr);
  /// The batch used by 0-based step `iteration` (pure function of seed).
  Batch batch_for(long iteration);

  ConfusionMatrix evaluate(const std::vector<Sample>& split);

  /// Atomic (temp file + rename).
  void save_checkpoint(const std::string& path) const;
  /// Restores parameters, buffers, optimiser state and the iteration counter.
  /// The stored config must describe the same networks.
  void load_checkpoint(const std::string& path);

  long iteration() const { return iteration_; }
  const RunConfig& config() const { return config_; }
  SegNet& segnet() { return segnet_; }
  Discriminator& discriminator() { return disc_; }
  const Dataset& data() const { return data_; }

 private:
  const std::vector<std::size_t>& epoch_order(long epoch);

  RunConfig config_;
  LossConfig loss_;
  const Dataset& data_;
  SegNet segnet_;
  Discriminator disc_;
  SgdNesterov sgd_;
  Adam adam_;
  long iteration_ = 0;
  long cached_epoch_ = -1;
  std::vector<std::size_t> order_;
};

/// Reads the JSON header of a checkpoint file.
nlohmann::json read_checkpoint_header(const std::string& path);
/// The run config stored in a checkpoint.
RunConfig checkpoint_config(const std::string& path);
/// Segmentation network with the weights and running stats of a checkpoint.
SegNet load_segnet(const std::string& path);

/// Eval-mode argmax labels; inputs not divisible by 8 are zero-padded at the
/// bottom/right and the prediction cropped back.
LabelMap infer_labels(SegNet& net, const Tensor& images);

struct TrainOutputs {
  std::vector<StepReport> losses;
  std::vector<std::pair<long, double>> miou_curve;
  double best_miou = 0.0;
  long best_iteration = 0;
  double final_miou = 0.0;
};

struct TrainOptions {
  /// Run directory; empty disables all file output.
  std::string out_dir;
  /// Stop after this many total iterations (< max_iterations), leaving the
  /// schedule unchanged. 0 runs to max_iterations.
  long stop_at = 0;
  std::function<void(const StepReport&)> on_step;
};

/// Trains from the trainer's current iteration to the end of the schedule,
/// evaluating on the validation split every eval_every steps. Writes
/// resolved_config.json, loss_curve.csv, miou_curve.csv, checkpoints and
/// eval_report.csv under out_dir.
TrainOutputs train(Trainer& trainer, const TrainOptions& options);

struct SweepRow {
  double lambda = 0.0;
  double best_miou = 0.0;
  long best_iteration = 0;
};

/// One independent run per λ (ascending), each in out_dir/lambda_<λ>.
std::vector<SweepRow> lambda_sweep(const RunConfig& config, const Dataset& data,
                                   std::vector<double> lambdas,
                                   const std::string& out_dir);

void write_sweep_report(const std::string& path, const std::vector<SweepRow>& rows);

/// Generates or loads the dataset a run config points at.
Dataset load_run_data(const RunConfig& config);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

}  // namespace seggan
