#include "seggan/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "seggan/error.hpp"
#include "seggan/labels.hpp"
#include "seggan/losses.hpp"

namespace seggan {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'E', 'G', 'G', 'A', 'N', '1', '\0'};
constexpr std::uint64_t kSegnetTag = 1;
constexpr std::uint64_t kDiscTag = 2;
constexpr std::uint64_t kEpochTag = 3;
constexpr std::uint64_t kAugmentTag = 4;
constexpr int kEvalChunk = 10;

void check_finite(const Tensor& t, const char* what, long iteration) {
  if (!t.all_finite()) {
    throw NumericalDivergence(std::string("non-finite values in ") + what +
                              " at iteration " + std::to_string(iteration + 1));
  }
}

void check_finite(double v, const char* what, long iteration) {
  if (!std::isfinite(v)) {
    throw NumericalDivergence(std::string("non-finite ") + what + " at iteration " +
                              std::to_string(iteration + 1));
  }
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
  Shape s = a.shape();
  s.n = a.n() + b.n();
  Tensor out(s);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
  return out;
}

Tensor batch_range(const Tensor& t, int start, int count) {
  Shape s = t.shape();
  s.n = count;
  Tensor out(s);
  const std::size_t per = t.shape().c * t.shape().plane();
  std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(start * per),
              count * per, out.data().begin());
  return out;
}

double grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (auto* p : params) {
    if (!p->value.has_grad()) continue;
    for (double g : p->value.grad()) s += g * g;
  }
  return std::sqrt(s);
}

struct Entry {
  std::string name;
  std::vector<double>* data;
  std::vector<int> shape;
};

std::vector<int> shape_vec(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

void write_csv_header_if_new(const fs::path& path, const std::string& header) {
  if (fs::exists(path)) return;
  std::ofstream f(path);
  f << header << '\n';
}

// Keeps the header and the rows whose first field is <= iteration.
void truncate_csv(const fs::path& path, long iteration) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> keep;
  if (std::getline(in, line)) keep.push_back(line);
  while (std::getline(in, line)) {
    const long it = std::stol(line.substr(0, line.find(',')));
    if (it <= iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Trainer::Trainer(const RunConfig& config, const Dataset& data)
    : config_(config),
      loss_(config.loss_config()),
      data_(data),
      segnet_(config.segnet, derive_seed(config.train.seed, kSegnetTag)),
      disc_(config.discriminator, config.segnet.num_classes,
            derive_seed(config.train.seed, kDiscTag)),
      sgd_(config.train.seg_optimizer.momentum, config.train.seg_optimizer.weight_decay),
      adam_(config.train.disc_optimizer.beta1, config.train.disc_optimizer.beta2) {
  config_.validate();
  if (data_.num_classes != config_.segnet.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data_.num_classes) +
                      " classes but the model expects " +
                      std::to_string(config_.segnet.num_classes));
  }
  if (data_.train.empty()) throw InputError("training split is empty");
}

const std::vector<std::size_t>& Trainer::epoch_order(long epoch) {
  if (epoch != cached_epoch_) {
    order_.resize(data_.train.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(derive_seed(derive_seed(config_.train.seed, kEpochTag),
                        static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order_);
    cached_epoch_ = epoch;
  }
  return order_;
}

Batch Trainer::batch_for(long iteration) {
  const auto& t = config_.train;
  const std::size_t n = data_.train.size();
  Batch b;
  b.images = Tensor({t.batch_size, 3, t.crop_size, t.crop_size});
  b.labels = LabelMap(t.batch_size, t.crop_size, t.crop_size);
  for (int j = 0; j < t.batch_size; ++j) {
    const std::uint64_t k = static_cast<std::uint64_t>(iteration) * t.batch_size + j;
    const auto& order = epoch_order(static_cast<long>(k / n));
    const Sample& s = data_.train[order[k % n]];
    Rng rng(derive_seed(derive_seed(t.seed, kAugmentTag), k));
    Sample a = augment(s, t.crop_size, t.scale_range, rng);
    b.images.set_slice(j, a.image);
    b.labels.set_slice(j, a.labels);
  }
  return b;
}

StepReport Trainer::step(StepProbe* probe) {
  const auto& t = config_.train;
  if (iteration_ >= t.max_iterations) {
    throw ConfigError("trainer: schedule already finished");
  }
  const long it = iteration_;
  StepReport r;
  r.iteration = it + 1;
  r.lr_seg = poly_lr(t.seg_optimizer.base_lr, it, t.max_iterations,
                     t.seg_optimizer.poly_power);
  r.lr_disc = poly_lr(t.disc_optimizer.base_lr, it, t.max_iterations,
                      t.disc_optimizer.poly_power);

  const Batch batch = batch_for(it);
  auto seg_params = segnet_.parameters();
  auto disc_params = disc_.parameters();
  zero_grads(seg_params);
  zero_grads(disc_params);

  const SegNetOutput out = segnet_.forward(batch.images, Mode::Train);
  const Tensor& fake = out.prob;
  check_finite(fake, "segmentation probabilities", it);

  // Phase 1: the fake field enters D as a constant; fake and real share one
  // pass (D has no batch statistics).
  const Tensor real = one_hot_encode(batch.labels, config_.segnet.num_classes,
                                     config_.discriminator.label_smoothing);
  const int n = batch.images.n();
  const Tensor conf = disc_.forward(concat_batch(batch.images, batch.images),
                                    concat_batch(fake, real));
  check_finite(conf, "discriminator confidence", it);
  const LossResult ld =
      loss_discriminator(batch_range(conf, 0, n), batch_range(conf, n, n), loss_);
  r.l_d = ld.value;
  check_finite(r.l_d, "discriminator loss", it);
  disc_.backward(concat_batch(ld.grad, ld.grad_other));
  adam_.step(disc_params, r.lr_disc);
  if (probe) probe->seg_grad_norm_after_disc_update = grad_norm(seg_params);

  // Phase 2: gradients reach S through D; D's parameters are not stepped.
  std::vector<std::vector<double>> disc_before;
  if (probe) {
    for (auto* p : disc_.all_parameters()) disc_before.push_back(p->value.vec());
  }
  zero_grads(disc_params);
  const Tensor conf_fake = disc_.forward(batch.images, fake);
  check_finite(conf_fake, "discriminator confidence", it);
  const LossResult la = loss_adv(conf_fake, loss_);
  const LossResult lce = loss_ce(fake, batch.labels, loss_);
  r.l_adv = la.value;
  r.l_ce = lce.value;
  r.l_seg = loss_seg(r.l_ce, r.l_adv, loss_);
  check_finite(r.l_ce, "cross-entropy loss", it);
  check_finite(r.l_adv, "adversarial loss", it);
  Tensor grad_prob = lce.grad;
  if (loss_.lambda != 0.0) {
    Tensor g_adv = disc_.backward(la.grad);
    check_finite(g_adv, "adversarial gradient", it);
    g_adv *= loss_.lambda;
    grad_prob += g_adv;
  }
  segnet_.backward(grad_prob);
  sgd_.step(seg_params, r.lr_seg);
  zero_grads(disc_params);
  for (auto* p : seg_params) check_finite(p->value, "segmentation parameters", it);

  if (probe) {
    double delta = 0.0;
    auto after = disc_.all_parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
      for (std::size_t j = 0; j < after[i]->value.size(); ++j) {
        delta = std::max(delta, std::abs(after[i]->value[j] - disc_before[i][j]));
      }
    }
    probe->disc_param_change_in_seg_update = delta;
    probe->decayed_params = sgd_.decayed_last_step();
    probe->decayable_params = 0;
    for (auto* p : seg_params) {
      if (!p->decay_exempt) ++probe->decayable_params;
    }
  }
  iteration_ = it + 1;
  return r;
}

LabelMap infer_labels(SegNet& net, const Tensor& images) {
  const int h = images.h(), w = images.w();
  const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  if (ph == h && pw == w) return predict_labels(net.forward(images, Mode::Eval).prob);
  Tensor padded({images.n(), images.c(), ph, pw});
  for (int n = 0; n < images.n(); ++n)
    for (int c = 0; c < images.c(); ++c)
      for (int y = 0; y < h; ++y)
        std::copy_n(images.plane(n, c) + static_cast<std::size_t>(y) * w, w,
                    padded.plane(n, c) + static_cast<std::size_t>(y) * pw);
  const LabelMap full = predict_labels(net.forward(padded, Mode::Eval).prob);
  LabelMap out(images.n(), h, w);
  for (int n = 0; n < images.n(); ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(n, y, x) = full.at(n, y, x);
  return out;
}

ConfusionMatrix Trainer::evaluate(const std::vector<Sample>& split) {
  if (split.empty()) throw InputError("evaluation split is empty");
  ConfusionMatrix cm(config_.segnet.num_classes);
  std::size_t start = 0;
  while (start < split.size()) {
    const Shape one = split[start].image.shape();
    std::size_t stop = start + 1;
    while (stop < split.size() && stop - start < kEvalChunk &&
           split[stop].image.shape() == one) {
      ++stop;
    }
    const int count = static_cast<int>(stop - start);
    Tensor images({count, one.c, one.h, one.w});
    LabelMap truth(count, one.h, one.w);
    for (int i = 0; i < count; ++i) {
      images.set_slice(i, split[start + i].image);
      truth.set_slice(i, split[start + i].labels);
    }
    accumulate(cm, infer_labels(segnet_, images), truth);
    start = stop;
  }
  return cm;
}

void Trainer::save_checkpoint(const std::string& path) const {
  auto& self = const_cast<Trainer&>(*this);
  std::vector<Entry> entries;
  auto seg_params = self.segnet_.parameters();
  for (auto* p : seg_params) {
    entries.push_back({"segnet/" + p->name, &p->value.vec(), shape_vec(p->value.shape())});
  }
  for (auto& b : self.segnet_.buffers()) {
    entries.push_back({"segnet/" + b.name, b.data, {static_cast<int>(b.data->size())}});
  }
  for (auto* p : self.disc_.all_parameters()) {
    entries.push_back({"disc/" + p->name, &p->value.vec(), shape_vec(p->value.shape())});
  }
  auto& vel = self.sgd_.velocity();
  for (std::size_t i = 0; i < vel.size(); ++i) {
    entries.push_back({"sgd_velocity/" + seg_params[i]->name, &vel[i],
                       {static_cast<int>(vel[i].size())}});
  }
  auto disc_params = self.disc_.parameters();
  auto& m = self.adam_.first_moment();
  auto& v = self.adam_.second_moment();
  for (std::size_t i = 0; i < m.size(); ++i) {
    entries.push_back({"adam_m/" + disc_params[i]->name, &m[i],
                       {static_cast<int>(m[i].size())}});
    entries.push_back({"adam_v/" + disc_params[i]->name, &v[i],
                       {static_cast<int>(v[i].size())}});
  }

  json header;
  header["format"] = "seggan-checkpoint";
  header["config"] = to_json(config_);
  header["iteration"] = iteration_;
  header["adam_steps"] = adam_.steps();
  header["seed"] = config_.train.seed;
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    manifest.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.data->size() * sizeof(double);
  }
  header["tensors"] = manifest;
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write checkpoint " + path);
    f.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries) {
      f.write(reinterpret_cast<const char*>(e.data->data()),
              static_cast<std::streamsize>(e.data->size() * sizeof(double)));
    }
    if (!f) throw InputError("failed writing checkpoint " + path);
  }
  fs::rename(tmp, path);
}

json read_checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open checkpoint " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw InputError("checkpoint " + path + " has a bad magic string");
  }
  std::uint64_t len = 0;
  if (!f.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 30)) {
    throw InputError("checkpoint " + path + " has a corrupt header length");
  }
  std::string text(len, '\0');
  if (!f.read(text.data(), static_cast<std::streamsize>(len))) {
    throw InputError("checkpoint " + path + " is truncated");
  }
  try {
    json header = json::parse(text);
    header["__payload_start"] = 16 + len;
    return header;
  } catch (const json::exception& e) {
    throw InputError("checkpoint " + path + " header is not valid JSON");
  }
}

RunConfig checkpoint_config(const std::string& path) {
  json header = read_checkpoint_header(path);
  try {
    return run_config_from_json(header.at("config"));
  } catch (const json::exception&) {
    throw InputError("checkpoint " + path + " has no config");
  }
}

namespace {

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path)
      : path_(path), header_(read_checkpoint_header(path)), file_(path, std::ios::binary) {
    try {
      for (const auto& t : header_.at("tensors")) {
        table_[t.at("name").get<std::string>()] = {t.at("shape").get<std::vector<int>>(),
                                                   t.at("offset").get<std::uint64_t>()};
      }
    } catch (const json::exception&) {
      throw InputError("checkpoint " + path + " has a malformed tensor manifest");
    }
    payload_start_ = header_["__payload_start"].get<std::uint64_t>();
  }

  const json& header() const { return header_; }
  bool has(const std::string& name) const { return table_.count(name) != 0; }

  void read(const std::string& name, std::vector<double>& dst, const std::vector<int>& shape) {
    auto it = table_.find(name);
    if (it == table_.end()) throw InputError("checkpoint lacks tensor " + name);
    if (it->second.first != shape) {
      throw InputError("checkpoint tensor " + name + " has a different shape");
    }
    file_.seekg(static_cast<std::streamoff>(payload_start_ + it->second.second));
    if (!file_.read(reinterpret_cast<char*>(dst.data()),
                    static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
      throw InputError("checkpoint " + path_ + " is truncated at " + name);
    }
  }

  void read_segnet(SegNet& net) {
    for (auto* p : net.parameters()) {
      read("segnet/" + p->name, p->value.vec(), shape_vec(p->value.shape()));
    }
    for (auto& b : net.buffers()) {
      read("segnet/" + b.name, *b.data, {static_cast<int>(b.data->size())});
    }
  }

 private:
  std::string path_;
  json header_;
  std::ifstream file_;
  std::map<std::string, std::pair<std::vector<int>, std::uint64_t>> table_;
  std::uint64_t payload_start_ = 0;
};

}  // namespace

SegNet load_segnet(const std::string& path) {
  const RunConfig cfg = checkpoint_config(path);
  SegNet net(cfg.segnet, 0);
  CheckpointReader reader(path);
  reader.read_segnet(net);
  return net;
}

void Trainer::load_checkpoint(const std::string& path) {
  CheckpointReader reader(path);
  const json& header = reader.header();
  auto read_into = [&reader](const std::string& name, std::vector<double>& dst,
                             const std::vector<int>& shape) { reader.read(name, dst, shape); };
  reader.read_segnet(segnet_);
  auto seg_params = segnet_.parameters();
  for (auto* p : disc_.all_parameters()) {
    read_into("disc/" + p->name, p->value.vec(), shape_vec(p->value.shape()));
  }
  auto& vel = sgd_.velocity();
  vel.clear();
  if (reader.has("sgd_velocity/" + seg_params.front()->name)) {
    for (auto* p : seg_params) {
      vel.emplace_back(p->value.size());
      read_into("sgd_velocity/" + p->name, vel.back(), {static_cast<int>(p->value.size())});
    }
  }
  auto disc_params = disc_.parameters();
  auto& m = adam_.first_moment();
  auto& v = adam_.second_moment();
  m.clear();
  v.clear();
  if (!disc_params.empty() && reader.has("adam_m/" + disc_params.front()->name)) {
    for (auto* p : disc_params) {
      const int size = static_cast<int>(p->value.size());
      m.emplace_back(size);
      v.emplace_back(size);
      read_into("adam_m/" + p->name, m.back(), {size});
      read_into("adam_v/" + p->name, v.back(), {size});
    }
  }
  adam_.set_steps(header.value("adam_steps", 0L));
  iteration_ = header.value("iteration", 0L);
  if (iteration_ < 0 || iteration_ > config_.train.max_iterations) {
    throw InputError("checkpoint iteration outside the training schedule");
  }
}

namespace {

std::vector<std::pair<long, double>> read_miou_curve(const fs::path& path) {
  std::vector<std::pair<long, double>> rows;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    rows.emplace_back(std::stol(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return rows;
}

}  // namespace

TrainOutputs train(Trainer& trainer, const TrainOptions& options) {
  const RunConfig& cfg = trainer.config();
  const long max_it = cfg.train.max_iterations;
  const long stop = options.stop_at > 0 ? std::min(options.stop_at, max_it) : max_it;
  const bool files = !options.out_dir.empty();
  const fs::path dir(options.out_dir);
  const std::vector<Sample>& val = trainer.data().val;
  std::ofstream loss_csv, miou_csv;

  TrainOutputs out;
  out.best_miou = -1.0;
  if (files) {
    fs::create_directories(dir);
    std::ofstream(dir / "resolved_config.json") << to_json(cfg).dump(2) << '\n';
    truncate_csv(dir / "loss_curve.csv", trainer.iteration());
    truncate_csv(dir / "miou_curve.csv", trainer.iteration());
    write_csv_header_if_new(dir / "loss_curve.csv",
                            "iteration,l_d,l_ce,l_adv,l_seg,lr_seg,lr_disc");
    write_csv_header_if_new(dir / "miou_curve.csv", "iteration,miou");
    out.miou_curve = read_miou_curve(dir / "miou_curve.csv");
    for (const auto& [it, v] : out.miou_curve) {
      if (v > out.best_miou) {
        out.best_miou = v;
        out.best_iteration = it;
      }
    }
    loss_csv.open(dir / "loss_curve.csv", std::ios::app);
    miou_csv.open(dir / "miou_curve.csv", std::ios::app);
  }

  auto record_eval = [&](long it) {
    const double v = miou(trainer.evaluate(val));
    out.miou_curve.emplace_back(it, v);
    if (files) miou_csv << it << ',' << format_double(v) << '\n' << std::flush;
    if (v > out.best_miou) {
      out.best_miou = v;
      out.best_iteration = it;
      if (files) trainer.save_checkpoint((dir / "best.ckpt").string());
    }
    return v;
  };

  while (trainer.iteration() < stop) {
    const StepReport r = trainer.step();
    out.losses.push_back(r);
    if (files) {
      loss_csv << r.iteration << ',' << format_double(r.l_d) << ','
               << format_double(r.l_ce) << ',' << format_double(r.l_adv) << ','
               << format_double(r.l_seg) << ',' << format_double(r.lr_seg) << ','
               << format_double(r.lr_disc) << '\n' << std::flush;
    }
    if (options.on_step) options.on_step(r);
    if (!val.empty() && r.iteration % cfg.train.eval_every == 0) record_eval(r.iteration);
    if (files && cfg.train.checkpoint_every > 0 &&
        r.iteration % cfg.train.checkpoint_every == 0) {
      trainer.save_checkpoint((dir / "checkpoint.ckpt").string());
    }
  }

  if (!val.empty()) {
    const ConfusionMatrix cm = trainer.evaluate(val);
    out.final_miou = miou(cm);
    if (files) write_iou_report((dir / "eval_report.csv").string(), cm);
  }
  if (files) trainer.save_checkpoint((dir / "checkpoint.ckpt").string());
  if (out.best_miou < 0.0) {
    out.best_miou = out.final_miou;
    out.best_iteration = trainer.iteration();
  }
  return out;
}

std::vector<SweepRow> lambda_sweep(const RunConfig& config, const Dataset& data,
                                   std::vector<double> lambdas,
                                   const std::string& out_dir) {
  if (lambdas.empty()) throw ConfigError("sweep: no lambda values given");
  std::sort(lambdas.begin(), lambdas.end());
  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    RunConfig run = config;
    run.train.lambda = lambda;
    Trainer trainer(run, data);
    TrainOptions opts;
    if (!out_dir.empty()) {
      opts.out_dir = (fs::path(out_dir) / ("lambda_" + format_double(lambda))).string();
    }
    const TrainOutputs res = train(trainer, opts);
    rows.push_back({lambda, res.best_miou, res.best_iteration});
  }
  if (!out_dir.empty()) {
    write_sweep_report((fs::path(out_dir) / "sweep.csv").string(), rows);
  }
  return rows;
}

void write_sweep_report(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path);
  f << "lambda,best_miou,best_iteration\n";
  for (const auto& r : rows) {
    f << format_double(r.lambda) << ',' << format_double(r.best_miou) << ','
      << r.best_iteration << '\n';
  }
}

Dataset load_run_data(const RunConfig& config) {
  if (!config.data.root.empty()) return load_dataset(config.data.root);
  return gen_shapes_dataset(config.data.shapes);
}

}  // namespace seggan
