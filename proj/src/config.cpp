#include "seggan/config.hpp"

#include <fstream>
#include <set>

#include "seggan/error.hpp"

namespace seggan {

using json = nlohmann::json;

namespace {

// Reads optional keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + where() + "' must be an object");
  }

  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) type_error(key, "an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, long& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) type_error(key, "an integer");
      out = v->get<long>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) type_error(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) type_error(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) type_error(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) type_error(key, "a string");
      out = v->get<std::string>();
    }
  }
  template <typename T, std::size_t N>
  void get(const char* key, std::array<T, N>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != N) {
        type_error(key, "an array of " + std::to_string(N) + " integers");
      }
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number_integer()) type_error(key, "an integer array");
        out[i] = (*v)[i].get<T>();
      }
    }
  }
  void get(const char* key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) type_error(key, "an integer array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) type_error(key, "an integer array");
        out.push_back(e.get<int>());
      }
    }
  }
  void get(const char* key, std::pair<double, double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() ||
          !(*v)[1].is_number()) {
        type_error(key, "a [lo, hi] pair of numbers");
      }
      out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
    }
  }
  bool has(const char* key) const { return j_.contains(key); }
  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), where(key));
  }
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("config: unknown key '" + where(item.key()) + "'");
      }
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  [[noreturn]] void type_error(const char* key, const std::string& expected) const {
    throw ConfigError("config: '" + where(key) + "' must be " + expected);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_crf(Section s, ConvCrfConfig& c) {
  s.get("filter_size", c.filter_size);
  s.get("theta_alpha", c.theta_alpha);
  s.get("theta_beta", c.theta_beta);
  s.get("theta_gamma", c.theta_gamma);
  s.get("iterations", c.iterations);
  s.get("learnable_compat", c.learnable_compat);
  s.get("learnable_kernel_weights", c.learnable_kernel_weights);
  s.finish();
}

}  // namespace

TrainConfig TrainConfig::toy() { return TrainConfig{}; }

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.max_iterations = 50000;
  c.batch_size = 11;
  c.crop_size = 320;
  c.scale_range = {0.5, 1.5};
  c.seg_optimizer = SegOptimizerConfig{};
  c.eval_every = 1000;
  return c;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
  if (max_iterations < 1) throw ConfigError("train: max_iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (crop_size < 32 || crop_size % 32 != 0) {
    throw ConfigError("train: crop_size must be a positive multiple of 32, got " +
                      std::to_string(crop_size));
  }
  if (!(scale_range.first > 0.0) || scale_range.second < scale_range.first) {
    throw ConfigError("train: scale_range must satisfy 0 < lo <= hi");
  }
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  const auto& s = seg_optimizer;
  if (!(s.base_lr > 0.0) || s.momentum < 0.0 || s.momentum >= 1.0 ||
      s.weight_decay < 0.0 || s.poly_power < 0.0) {
    throw ConfigError("train: invalid seg_optimizer settings");
  }
  const auto& d = disc_optimizer;
  if (!(d.base_lr > 0.0) || d.beta1 < 0.0 || d.beta1 >= 1.0 || d.beta2 < 0.0 ||
      d.beta2 >= 1.0 || d.poly_power < 0.0) {
    throw ConfigError("train: invalid disc_optimizer settings");
  }
}

LossConfig RunConfig::loss_config() const {
  LossConfig l = loss;
  l.lambda = train.lambda;
  return l;
}

void RunConfig::validate() const {
  segnet.validate();
  discriminator.validate();
  train.validate();
  loss_config().validate();
  if (data.root.empty()) {
    data.shapes.validate();
    if (data.shapes.num_classes != segnet.num_classes) {
      throw ConfigError("config: data.shapes.num_classes (" +
                        std::to_string(data.shapes.num_classes) +
                        ") differs from model.segnet.num_classes (" +
                        std::to_string(segnet.num_classes) + ")");
    }
  }
}

json to_json(const RunConfig& cfg) {
  const auto& s = cfg.segnet;
  const auto& d = cfg.discriminator;
  const auto& c = d.crf;
  const auto& t = cfg.train;
  json j;
  j["model"]["segnet"] = {{"num_classes", s.num_classes},
                          {"base_channels", s.base_channels},
                          {"blocks_per_stage", s.blocks_per_stage},
                          {"dilations", s.dilations},
                          {"aspp_rates", s.aspp_rates}};
  j["model"]["discriminator"] = {{"channels", d.channels},
                                 {"kernel", d.kernel},
                                 {"stride", d.stride},
                                 {"leaky_slope", d.leaky_slope},
                                 {"num_crf_modules", d.num_crf_modules},
                                 {"label_smoothing", d.label_smoothing}};
  j["model"]["convcrf"] = {{"filter_size", c.filter_size},
                           {"theta_alpha", c.theta_alpha},
                           {"theta_beta", c.theta_beta},
                           {"theta_gamma", c.theta_gamma},
                           {"iterations", c.iterations},
                           {"learnable_compat", c.learnable_compat},
                           {"learnable_kernel_weights", c.learnable_kernel_weights}};
  j["train"] = {
      {"lambda", t.lambda},
      {"max_iterations", t.max_iterations},
      {"batch_size", t.batch_size},
      {"crop_size", t.crop_size},
      {"scale_range", {t.scale_range.first, t.scale_range.second}},
      {"seg_optimizer",
       {{"base_lr", t.seg_optimizer.base_lr},
        {"momentum", t.seg_optimizer.momentum},
        {"weight_decay", t.seg_optimizer.weight_decay},
        {"poly_power", t.seg_optimizer.poly_power}}},
      {"disc_optimizer",
       {{"base_lr", t.disc_optimizer.base_lr},
        {"beta1", t.disc_optimizer.beta1},
        {"beta2", t.disc_optimizer.beta2},
        {"poly_power", t.disc_optimizer.poly_power}}},
      {"eval_every", t.eval_every},
      {"checkpoint_every", t.checkpoint_every},
      {"seed", t.seed},
      {"loss",
       {{"epsilon", cfg.loss.epsilon},
        {"reduction", cfg.loss.reduction == Reduction::Mean ? "mean" : "sum"},
        {"ignore_value", cfg.loss.ignore_value}}}};
  const auto& sh = cfg.data.shapes;
  j["data"] = {{"root", cfg.data.root},
               {"shapes",
                {{"num_samples", sh.num_samples},
                 {"image_size", sh.image_size},
                 {"num_classes", sh.num_classes},
                 {"min_shapes", sh.min_shapes},
                 {"max_shapes", sh.max_shapes},
                 {"seed", sh.seed}}}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  if (root.has("model")) {
    Section model = root.sub("model");
    if (model.has("segnet")) {
      Section s = model.sub("segnet");
      s.get("num_classes", cfg.segnet.num_classes);
      s.get("base_channels", cfg.segnet.base_channels);
      s.get("blocks_per_stage", cfg.segnet.blocks_per_stage);
      s.get("dilations", cfg.segnet.dilations);
      s.get("aspp_rates", cfg.segnet.aspp_rates);
      s.finish();
    }
    if (model.has("discriminator")) {
      Section s = model.sub("discriminator");
      auto& d = cfg.discriminator;
      s.get("channels", d.channels);
      s.get("kernel", d.kernel);
      s.get("stride", d.stride);
      s.get("leaky_slope", d.leaky_slope);
      s.get("num_crf_modules", d.num_crf_modules);
      s.get("label_smoothing", d.label_smoothing);
      s.finish();
    }
    if (model.has("convcrf")) read_crf(model.sub("convcrf"), cfg.discriminator.crf);
    model.finish();
  }
  if (root.has("train")) {
    Section s = root.sub("train");
    auto& t = cfg.train;
    s.get("lambda", t.lambda);
    s.get("max_iterations", t.max_iterations);
    s.get("batch_size", t.batch_size);
    s.get("crop_size", t.crop_size);
    s.get("scale_range", t.scale_range);
    s.get("eval_every", t.eval_every);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("seed", t.seed);
    if (s.has("seg_optimizer")) {
      Section o = s.sub("seg_optimizer");
      o.get("base_lr", t.seg_optimizer.base_lr);
      o.get("momentum", t.seg_optimizer.momentum);
      o.get("weight_decay", t.seg_optimizer.weight_decay);
      o.get("poly_power", t.seg_optimizer.poly_power);
      o.finish();
    }
    if (s.has("disc_optimizer")) {
      Section o = s.sub("disc_optimizer");
      o.get("base_lr", t.disc_optimizer.base_lr);
      o.get("beta1", t.disc_optimizer.beta1);
      o.get("beta2", t.disc_optimizer.beta2);
      o.get("poly_power", t.disc_optimizer.poly_power);
      o.finish();
    }
    if (s.has("loss")) {
      Section l = s.sub("loss");
      l.get("epsilon", cfg.loss.epsilon);
      std::string reduction = cfg.loss.reduction == Reduction::Mean ? "mean" : "sum";
      l.get("reduction", reduction);
      if (reduction == "mean") {
        cfg.loss.reduction = Reduction::Mean;
      } else if (reduction == "sum") {
        cfg.loss.reduction = Reduction::Sum;
      } else {
        throw ConfigError("config: 'train.loss.reduction' must be \"mean\" or \"sum\"");
      }
      l.get("ignore_value", cfg.loss.ignore_value);
      l.finish();
    }
    s.finish();
  }
  if (root.has("data")) {
    Section s = root.sub("data");
    s.get("root", cfg.data.root);
    if (s.has("shapes")) {
      Section sh = s.sub("shapes");
      auto& c = cfg.data.shapes;
      sh.get("num_samples", c.num_samples);
      sh.get("image_size", c.image_size);
      sh.get("num_classes", c.num_classes);
      sh.get("min_shapes", c.min_shapes);
      sh.get("max_shapes", c.max_shapes);
      sh.get("seed", c.seed);
      sh.finish();
    }
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace seggan
