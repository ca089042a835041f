// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay, global-norm gradient clipping and the
// linear-warmup / cosine-decay learning rate schedule.
#pragma once

#include <cstdint>
#include <vector>

#include "dgae/params.hpp"

namespace dgae {

struct OptimizerConfig {
  double lr_peak = 1e-4;
  double lr_final = 1e-5;
  std::int64_t warmup = 10000;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;

  void validate() const;
};

/// step < warmup: lr_peak * step / warmup; afterwards cosine decay to lr_final at total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup = 10000, double lr_peak = 1e-4,
                   double lr_final = 1e-5);

/// Moments for one network. `step` counts completed updates.
template <typename T>
struct OptimizerState {
  std::int64_t step = 0;
  ModelParams<T> m;
  ModelParams<T> v;

  static OptimizerState fresh(const ModelParams<T>& params) { return {0, params.zeros_like(), params.zeros_like()}; }
};

/// Scales all gradients jointly so the global L2 norm is at most max_norm.
/// Returns the norm before clipping. Non-finite entries raise NumericError naming the parameter.
template <typename T>
double clip_gradients(const std::vector<ModelParams<T>*>& grads, double max_norm = 1.0);

/// One AdamW step in place. Decay applies only to names accepted by is_decayed_param.
template <typename T>
void adamw_update(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state, double lr,
                  const OptimizerConfig& cfg = {});

}  // namespace dgae
