#pragma once

// Adam with L2 weight decay folded into the gradient, global-norm clipping,
// and the warmup + cosine learning-rate schedule.

#include "rfrp/autograd.hpp"

#include <map>
#include <string>
#include <vector>

namespace rfrp::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct Moments {
  Matrix m;
  Matrix v;
  long step = 0;
};

/// Moments are keyed by parameter name; a parameter's step count advances only
/// when it takes part in an update.
struct OptimizerState {
  AdamConfig config;
  std::map<std::string, Moments> moments;

  /// Clips, then applies one update; returns the pre-clip global gradient norm.
  double step(const std::vector<ad::Parameter*>& params, double lr);
};

double global_norm(const std::vector<ad::Parameter*>& params);
/// Scales gradients so their global norm is at most max_norm; returns the norm before scaling.
double clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm);

/// Linear warmup lr_min -> lr_max over warmup_steps, then cosine decay back to
/// lr_min at total_steps.
double lr_at(long step, long total_steps, long warmup_steps, double lr_min = 3e-5, double lr_max = 3e-4);

template <class Model>
std::vector<ad::Parameter*> parameters_of(Model& model) {
  std::vector<ad::Parameter*> out;
  model.visit([&out](ad::Parameter& p) { out.push_back(&p); });
  return out;
}

inline void zero_grads(const std::vector<ad::Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace rfrp::optim
