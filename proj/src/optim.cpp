#include "rfrp/optim.hpp"

#include <cmath>

namespace rfrp::optim {

double global_norm(const std::vector<ad::Parameter*>& params) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm) {
  const double norm = global_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto* p : params) p->grad *= factor;
  }
  return norm;
}

double OptimizerState::step(const std::vector<ad::Parameter*>& params, double lr) {
  require(lr >= 0.0, "OptimizerState::step: negative learning rate");
  const double norm = clip_gradients(params, config.clip_norm);
  for (auto* p : params) {
    require(p->grad.rows() == p->value.rows() && p->grad.cols() == p->value.cols(),
            "OptimizerState::step: gradient shape differs from '" + p->name + "'");
    auto [it, inserted] = moments.try_emplace(p->name);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Matrix::Zero(p->value.rows(), p->value.cols());
      mo.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    require(mo.m.rows() == p->value.rows() && mo.m.cols() == p->value.cols(),
            "OptimizerState::step: moment shape differs from '" + p->name + "'");
    ++mo.step;
    const Matrix g = p->grad + config.weight_decay * p->value;
    mo.m = config.beta1 * mo.m + (1.0 - config.beta1) * g;
    mo.v = config.beta2 * mo.v + (1.0 - config.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(mo.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(mo.step));
    p->value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + config.eps);
  }
  return norm;
}

double lr_at(long step, long total_steps, long warmup_steps, double lr_min, double lr_max) {
  require(total_steps >= 1 && step >= 0 && step <= total_steps, "lr_at: need 0 <= step <= total_steps");
  require(warmup_steps >= 0 && warmup_steps <= total_steps, "lr_at: warmup outside [0, total_steps]");
  if (step < warmup_steps) {
    return lr_min + (lr_max - lr_min) * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return lr_max;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * progress));
}

}  // namespace rfrp::optim
