#include "seggan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seggan/error.hpp"

namespace seggan {

namespace {

// -log(max(x, eps)) and its derivative (0 where the clamp is active).
struct NegLog {
  double value;
  double slope;
};

NegLog neg_log(double x, double eps) {
  if (x > eps) return {-std::log(std::min(x, 1.0)), x < 1.0 ? -1.0 / x : -1.0};
  return {-std::log(eps), 0.0};
}

void check_confidence(const Tensor& conf, const char* what) {
  if (conf.c() != 1) {
    throw ConfigError(std::string(what) + ": confidence map must have one channel, got " +
                      conf.shape().str());
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be >= 0");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw ConfigError("loss: epsilon must lie in (0, 1e-3]");
  }
}

LossResult loss_discriminator(const Tensor& conf_fake, const Tensor& conf_real,
                              const LossConfig& cfg) {
  cfg.validate();
  check_confidence(conf_fake, "loss_discriminator");
  require_same_shape(conf_fake.shape(), conf_real.shape(), "loss_discriminator");
  LossResult r;
  r.count = conf_fake.size();
  r.grad = Tensor(conf_fake.shape());
  r.grad_other = Tensor(conf_real.shape());
  const double scale =
      cfg.reduction == Reduction::Mean ? 1.0 / static_cast<double>(r.count) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < conf_fake.size(); ++i) {
    const NegLog f = neg_log(1.0 - conf_fake[i], cfg.epsilon);
    const NegLog t = neg_log(conf_real[i], cfg.epsilon);
    total += f.value + t.value;
    r.grad[i] = -f.slope * scale;
    r.grad_other[i] = t.slope * scale;
  }
  r.value = cfg.reduction == Reduction::Mean
                ? total / static_cast<double>(r.count)
                : total;
  return r;
}

LossResult loss_ce(const Tensor& prob, const LabelMap& labels,
                   const LossConfig& cfg) {
  cfg.validate();
  if (prob.n() != labels.n || prob.h() != labels.h || prob.w() != labels.w) {
    throw ConfigError("loss_ce: probability map " + prob.shape().str() +
                      " does not match labels [" + std::to_string(labels.n) +
                      "," + std::to_string(labels.h) + "," +
                      std::to_string(labels.w) + "]");
  }
  const std::size_t plane = labels.plane();
  std::size_t count = 0;
  for (std::uint8_t v : labels.values) {
    if (v != cfg.ignore_value) {
      if (v >= prob.c()) {
        throw InputError("loss_ce: label " + std::to_string(v) +
                         " out of range for " + std::to_string(prob.c()) +
                         " classes");
      }
      ++count;
    }
  }
  LossResult r;
  r.grad = Tensor(prob.shape());
  r.count = count;
  if (count == 0) {
    r.all_ignored = true;
    return r;
  }
  const double scale =
      cfg.reduction == Reduction::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  double total = 0.0;
  for (int n = 0; n < labels.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t v = labels.values[n * plane + p];
      if (v == cfg.ignore_value) continue;
      const NegLog l = neg_log(prob.plane(n, v)[p], cfg.epsilon);
      total += l.value;
      r.grad.plane(n, v)[p] = l.slope * scale;
    }
  }
  r.value = cfg.reduction == Reduction::Mean
                ? total / static_cast<double>(r.count)
                : total;
  return r;
}

LossResult loss_adv(const Tensor& conf_fake, const LossConfig& cfg) {
  cfg.validate();
  check_confidence(conf_fake, "loss_adv");
  LossResult r;
  r.count = conf_fake.size();
  r.grad = Tensor(conf_fake.shape());
  const double scale =
      cfg.reduction == Reduction::Mean ? 1.0 / static_cast<double>(r.count) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < conf_fake.size(); ++i) {
    const NegLog l = neg_log(conf_fake[i], cfg.epsilon);
    total += l.value;
    r.grad[i] = l.slope * scale;
  }
  r.value = cfg.reduction == Reduction::Mean
                ? total / static_cast<double>(r.count)
                : total;
  return r;
}

double loss_seg(double l_ce, double l_adv, const LossConfig& cfg) {
  cfg.validate();
  return l_ce + cfg.lambda * l_adv;
}

}  // namespace seggan
