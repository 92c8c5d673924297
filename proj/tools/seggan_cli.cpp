#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "seggan/error.hpp"
#include "seggan/gradsuite.hpp"
#include "seggan/trainer.hpp"

namespace fs = std::filesystem;
using namespace seggan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUser = 2;
constexpr int kExitDiverged = 3;

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--lambdas: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--lambdas: empty list");
  return out;
}

void check_threads_env() {
  const char* v = std::getenv("SEGGAN_THREADS");
  if (!v) return;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*v == '\0' || *end != '\0' || n < 1) {
    throw ConfigError(std::string("SEGGAN_THREADS must be a positive integer, got '") + v + "'");
  }
}

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 0;
  int count = 250;
  int size = 64;
  int classes = 4;
};

int cmd_gen_data(const GenDataArgs& a) {
  ShapesConfig cfg;
  cfg.seed = a.seed;
  cfg.num_samples = a.count;
  cfg.image_size = a.size;
  cfg.num_classes = a.classes;
  cfg.validate();
  Dataset data = gen_shapes_dataset(cfg);
  write_dataset(a.out, data, cfg);
  std::cout << "wrote " << data.train.size() << " train and " << data.val.size()
            << " val samples to " << a.out << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  long stop_at = 0;
};

RunConfig resolve_config(const std::string& path, std::optional<double> lambda,
                         std::optional<std::uint64_t> seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (lambda) cfg.train.lambda = *lambda;
  if (seed) cfg.train.seed = *seed;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.resume.empty()) {
    if (!a.config.empty() || a.lambda || a.seed) {
      throw ConfigError("--resume continues the stored run; drop --config/--lambda/--seed");
    }
    cfg = checkpoint_config(a.resume);
  } else {
    cfg = resolve_config(a.config, a.lambda, a.seed);
  }
  const Dataset data = load_run_data(cfg);
  Trainer trainer(cfg, data);
  if (!a.resume.empty()) trainer.load_checkpoint(a.resume);
  TrainOptions opts;
  opts.out_dir = a.out;
  opts.stop_at = a.stop_at;
  const long every = std::max(1L, cfg.train.max_iterations / 20);
  opts.on_step = [every](const StepReport& r) {
    if (r.iteration % every == 0) {
      std::printf("iter %ld l_d=%.5f l_ce=%.5f l_adv=%.5f lr_seg=%.3g\n", r.iteration, r.l_d,
                  r.l_ce, r.l_adv, r.lr_seg);
      std::fflush(stdout);
    }
  };
  const TrainOutputs out = train(trainer, opts);
  std::cout << "best_miou=" << format_double(out.best_miou) << " at iteration "
            << out.best_iteration << '\n';
  std::cout << "final_miou=" << format_double(out.final_miou) << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  std::string report;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig cfg = checkpoint_config(a.checkpoint);
  SegNet net = load_segnet(a.checkpoint);
  Dataset data;
  if (a.data.empty()) {
    data = load_run_data(cfg);
  } else {
    data = load_dataset(a.data);
  }
  if (data.num_classes != cfg.segnet.num_classes) {
    throw InputError("dataset has " + std::to_string(data.num_classes) +
                     " classes, checkpoint expects " + std::to_string(cfg.segnet.num_classes));
  }
  std::vector<Sample> split;
  if (a.split == "val") {
    split = data.val;
  } else if (a.split == "train") {
    split = data.train;
  } else {
    split = data.train;
    split.insert(split.end(), data.val.begin(), data.val.end());
  }
  if (split.empty()) throw InputError("split '" + a.split + "' is empty");
  ConfusionMatrix cm(cfg.segnet.num_classes);
  for (const Sample& s : split) accumulate(cm, infer_labels(net, s.image), s.labels);
  const std::string report =
      a.report.empty()
          ? (fs::path(a.checkpoint).parent_path() / ("eval_" + a.split + ".csv")).string()
          : a.report;
  write_iou_report(report, cm);
  std::cout << "report=" << report << '\n';
  std::cout << "miou=" << format_double(miou(cm)) << '\n';
  return kExitOk;
}

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
};

int cmd_infer(const InferArgs& a) {
  SegNet net = load_segnet(a.checkpoint);
  const Tensor image = read_rgb_png(a.image);
  const LabelMap labels = infer_labels(net, image);
  write_label_png(a.out, labels);
  std::cout << "wrote " << a.out << " (" << labels.w << "x" << labels.h << ")\n";
  return kExitOk;
}

struct SweepArgs {
  std::string config;
  std::string out;
  std::string lambdas = "0.005,0.01,0.02,0.05";
  long iterations = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a) {
  RunConfig cfg = resolve_config(a.config, std::nullopt, a.seed);
  if (a.iterations > 0) cfg.train.max_iterations = a.iterations;
  cfg.train.eval_every = std::min(cfg.train.eval_every, cfg.train.max_iterations);
  cfg.validate();
  const Dataset data = load_run_data(cfg);
  fs::create_directories(a.out);
  const auto rows = lambda_sweep(cfg, data, parse_lambdas(a.lambdas), a.out);
  std::cout << "lambda,best_miou,best_iteration\n";
  for (const auto& r : rows) {
    std::cout << format_double(r.lambda) << ',' << format_double(r.best_miou) << ','
              << r.best_iteration << '\n';
  }
  std::cout << "report=" << (fs::path(a.out) / "sweep.csv").string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool fault) {
  GradSuiteOptions opts;
  opts.seed = seed;
  opts.inject_fault = fault;
  const auto rows = run_grad_suite(opts);
  std::printf("%-24s %-12s %-8s %-8s %-8s %s\n", "op", "max_rel_err", "tol", "entries",
              "kinks", "status");
  for (const auto& r : rows) {
    std::printf("%-24s %-12.3e %-8.0e %-8zu %-8zu %s\n", r.op.c_str(), r.max_rel_error,
                r.tolerance, r.entries_checked, r.entries_skipped, r.passed() ? "PASS" : "FAIL");
  }
  const bool ok = all_passed(rows);
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient checks FAILED");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Seg-GAN: adversarial semantic segmentation with ConvCRF discriminator"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic shapes dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--count", gen.count, "Number of samples");
  gen_cmd->add_option("--size", gen.size, "Image side (multiple of 32)");
  gen_cmd->add_option("--classes", gen.classes, "Classes including background (2-4)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train S and D adversarially");
  train_cmd->add_option("--config", tr.config, "Run config JSON (default: toy preset)");
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--lambda", tr.lambda, "Override train.lambda");
  train_cmd->add_option("--seed", tr.seed, "Override train.seed");
  train_cmd->add_option("--resume", tr.resume, "Continue from a checkpoint");
  train_cmd->add_option("--stop-at", tr.stop_at, "Stop after this many total iterations");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory (default: the run's data)");
  eval_cmd->add_option("--split", ev.split, "val, train or all")
      ->check(CLI::IsMember({"val", "train", "all"}));
  eval_cmd->add_option("--report", ev.report, "Per-class CSV path");

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Predict a label PNG for one image");
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--image", inf.image, "RGB PNG")->required();
  infer_cmd->add_option("--out", inf.out, "Output label PNG")->required();

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Independent runs over lambda values");
  sweep_cmd->add_option("--config", sw.config, "Run config JSON (default: toy preset)");
  sweep_cmd->add_option("--out", sw.out, "Sweep directory")->required();
  sweep_cmd->add_option("--lambdas", sw.lambdas, "Comma-separated lambda values");
  sweep_cmd->add_option("--iterations", sw.iterations, "Override train.max_iterations");
  sweep_cmd->add_option("--seed", sw.seed, "Override train.seed");

  std::uint64_t gc_seed = 0;
  bool gc_fault = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc_seed, "First seed of the suite");
  gc_cmd->add_flag("--inject-fault", gc_fault, "Corrupt one analytic gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    check_threads_env();
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*infer_cmd) return cmd_infer(inf);
    if (*sweep_cmd) return cmd_sweep(sw);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_fault);
  } catch (const NumericalDivergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUser;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
