// SPDX-License-Identifier: Apache-2.0
#include "dgae/optim.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace dgae {

void OptimizerConfig::validate() const {
  auto positive = [](double v, const char* key) {
    if (!(std::isfinite(v) && v > 0)) throw ConfigError(std::string("optim.") + key + " must be positive and finite");
  };
  positive(lr_peak, "lr_peak");
  if (!(std::isfinite(lr_final) && lr_final >= 0)) throw ConfigError("optim.lr_final must be >= 0");
  if (warmup < 0) throw ConfigError("optim.warmup must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("optim.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("optim.beta2 must lie in [0, 1)");
  positive(eps, "eps");
  if (!(std::isfinite(weight_decay) && weight_decay >= 0)) throw ConfigError("optim.weight_decay must be >= 0");
  positive(clip_norm, "clip_norm");
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup, double lr_peak,
                   double lr_final) {
  if (warmup < 0 || warmup >= total_steps)
    throw ConfigError("lr_schedule: need 0 <= warmup < total_steps (warmup " + std::to_string(warmup) + ", total " +
                      std::to_string(total_steps) + ")");
  if (step < 0 || step > total_steps)
    throw ConfigError("lr_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  if (step < warmup) return lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return lr_final + 0.5 * (lr_peak - lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double clip_gradients(const std::vector<ModelParams<T>*>& grads, double max_norm) {
  double sq = 0;
  for (const ModelParams<T>* g : grads)
    for (const auto& [name, t] : g->entries())
      for (T v : t.values()) {
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite gradient in parameter '" + name + "'");
        sq += static_cast<double>(v) * static_cast<double>(v);
      }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (ModelParams<T>* g : grads)
      for (auto& e : g->entries())
        for (T& v : e.second.values()) v *= scale;
  }
  return norm;
}

template <typename T>
void adamw_update(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state, double lr,
                  const OptimizerConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adamw_update: parameter, gradient and moment sets differ in size");
  if (state.step == std::numeric_limits<std::int64_t>::max()) throw NumericError("adamw_update: step counter overflow");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T one_b1 = static_cast<T>(1.0 - cfg.beta1), one_b2 = static_cast<T>(1.0 - cfg.beta2);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.eps), step_lr = static_cast<T>(lr);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params.entries()[i];
    const Tensor<T>& g = grads.entries()[i].second;
    Tensor<T>& m = state.m.entries()[i].second;
    Tensor<T>& v = state.v.entries()[i].second;
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape())
      throw ShapeError("adamw_update: shape mismatch for '" + name + "'");
    const T wd = is_decayed_param(name) ? static_cast<T>(cfg.weight_decay) : T(0);
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + one_b1 * g[j];
      v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
      const T m_hat = m[j] * inv_bc1;
      const T v_hat = v[j] * inv_bc2;
      p[j] -= step_lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * p[j]);
    }
  }
}

#define DGAE_INSTANTIATE(T)                                                                   \
  template double clip_gradients<T>(const std::vector<ModelParams<T>*>&, double);             \
  template void adamw_update<T>(ModelParams<T>&, const ModelParams<T>&, OptimizerState<T>&, double, \
                                const OptimizerConfig&);
DGAE_INSTANTIATE(float)
DGAE_INSTANTIATE(double)
#undef DGAE_INSTANTIATE

}  // namespace dgae
