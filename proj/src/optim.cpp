#include "seggan/optim.hpp"

#include <cmath>

#include "seggan/error.hpp"

namespace seggan {

namespace {

void ensure_slots(std::vector<std::vector<double>>& slots,
                  const std::vector<Parameter*>& params) {
  if (slots.empty()) {
    for (auto* p : params) slots.emplace_back(p->value.size(), 0.0);
    return;
  }
  if (slots.size() != params.size()) {
    throw ConfigError("optimizer: parameter list changed size");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (slots[i].size() != params[i]->value.size()) {
      throw ConfigError("optimizer: state for " + params[i]->name +
                        " has the wrong size");
    }
  }
}

}  // namespace

double poly_lr(double base_lr, long iteration, long max_iterations, double power) {
  if (max_iterations <= 0) throw ConfigError("poly_lr: max_iterations must be > 0");
  if (iteration < 0 || iteration > max_iterations) {
    throw ConfigError("poly_lr: iteration out of range");
  }
  const double frac = 1.0 - static_cast<double>(iteration) /
                                static_cast<double>(max_iterations);
  return base_lr * std::pow(frac, power);
}

void SgdNesterov::step(const std::vector<Parameter*>& params, double lr) {
  ensure_slots(velocity_, params);
  decayed_ = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.value.has_grad()) continue;
    const bool decay = !p.decay_exempt && weight_decay_ != 0.0;
    if (decay) ++decayed_;
    const auto& g = p.value.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double gj = decay ? g[j] + weight_decay_ * p.value[j] : g[j];
      v[j] = momentum_ * v[j] + gj;
      p.value[j] -= lr * (gj + momentum_ * v[j]);
    }
  }
}

void Adam::step(const std::vector<Parameter*>& params, double lr) {
  ensure_slots(m_, params);
  ensure_slots(v_, params);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.value.has_grad()) continue;
    const auto& g = p.value.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace seggan
