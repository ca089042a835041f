// SPDX-License-Identifier: Apache-2.0
//
// Linear-interpolation forward process x_t = (1 - t) x0 + t eps on t in [0, 1],
// velocity parameterization v = eps - x0, and the Euler sampler that decodes
// a latent by integrating the learned velocity field from t = 1 to t = 0.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "dgae/autograd.hpp"
#include "dgae/tensor.hpp"

namespace dgae {

struct SamplerConfig {
  int num_steps = 50;
  bool stochastic = false;
  /// Fraction of fresh noise mixed into the predicted noise per stochastic step.
  double churn = 0.5;
  std::string rng_stream = "sampler";

  void validate() const;
};

/// x_t = (1 - t) x0 + t eps, with one t per batch element.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, const Tensor<T>& eps, std::span<const T> t);

/// x0' = x_t - t v.
template <typename T>
Tensor<T> predict_x0(const Tensor<T>& x_t, std::span<const T> t, const Tensor<T>& v);

/// Tape version of predict_x0, differentiable in x_t and v.
template <typename T>
ag::Var<T> predict_x0(ag::Var<T> x_t, std::span<const T> t, ag::Var<T> v);

/// score = -(x_t + (1 - t) v) / t, i.e. -eps/t with eps recovered from (x_t, v).
template <typename T>
Tensor<T> score_from_velocity(const Tensor<T>& v, const Tensor<T>& x_t, std::span<const T> t);

/// Velocity field v(x, t, cond); t holds one value per batch element.
template <typename T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& x, std::span<const T> t, const Tensor<T>& cond)>;

/// Standard-normal noise where item i of the batch uses substream (seed, stream, first_index + i),
/// so a batch and its singleton decomposition see the same per-item noise.
template <typename T>
Tensor<T> per_item_noise(const Shape& shape, std::uint64_t seed, const std::string& stream,
                         std::uint64_t first_index = 0);

/// Decodes latent z: cond = nearest-upsample(z, f); integrate from x1 at t = 1 to t = 0
/// with uniform Euler steps; clamp to [-1, 1]. `x1` is the initial noise [N,3,H,W].
/// In stochastic mode fresh noise is drawn from (noise_seed, cfg.rng_stream, item, step).
template <typename T>
Tensor<T> sample(const Tensor<T>& z, const SamplerConfig& cfg, const VelocityFn<T>& velocity, int f,
                 const Tensor<T>& x1, std::uint64_t noise_seed = 0, std::uint64_t first_index = 0);

}  // namespace dgae
