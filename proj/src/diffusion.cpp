// SPDX-License-Identifier: Apache-2.0
#include "dgae/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "dgae/nets.hpp"
#include "dgae/rng.hpp"

namespace dgae {
namespace {

template <typename T>
std::size_t per_item(const Tensor<T>& x, std::span<const T> t, const char* op) {
  if (x.rank() < 1 || static_cast<std::int64_t>(t.size()) != x.dim(0))
    throw ShapeError(std::string(op) + ": need one t per batch element");
  return x.size() / t.size();
}

}  // namespace

void SamplerConfig::validate() const {
  if (num_steps < 1) throw ConfigError("sampler.steps must be >= 1");
  if (!(churn >= 0.0 && churn <= 1.0)) throw ConfigError("sampler.churn must be in [0, 1]");
}

template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, const Tensor<T>& eps, std::span<const T> t) {
  require_same_shape(x0.shape(), eps.shape(), "forward_noise");
  const std::size_t per = per_item(x0, t, "forward_noise");
  for (T ti : t)
    if (!(ti >= T(0) && ti <= T(1))) throw DomainError("forward_noise: t must lie in [0, 1]");
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T ti = t[i / per];
    out[i] = (T(1) - ti) * x0[i] + ti * eps[i];
  }
  return out;
}

template <typename T>
Tensor<T> predict_x0(const Tensor<T>& x_t, std::span<const T> t, const Tensor<T>& v) {
  require_same_shape(x_t.shape(), v.shape(), "predict_x0");
  const std::size_t per = per_item(x_t, t, "predict_x0");
  for (T ti : t)
    if (!(ti >= T(0) && ti <= T(1))) throw DomainError("predict_x0: t must lie in [0, 1]");
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] - t[i / per] * v[i];
  return out;
}

template <typename T>
ag::Var<T> predict_x0(ag::Var<T> x_t, std::span<const T> t, ag::Var<T> v) {
  return ag::sub(x_t, ag::mul_per_sample(v, t));
}

template <typename T>
Tensor<T> score_from_velocity(const Tensor<T>& v, const Tensor<T>& x_t, std::span<const T> t) {
  require_same_shape(x_t.shape(), v.shape(), "score_from_velocity");
  const std::size_t per = per_item(x_t, t, "score_from_velocity");
  for (T ti : t)
    if (!(ti > T(0) && ti <= T(1))) throw DomainError("score_from_velocity: t must lie in (0, 1]");
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T ti = t[i / per];
    out[i] = -(x_t[i] + (T(1) - ti) * v[i]) / ti;
  }
  return out;
}

template <typename T>
Tensor<T> per_item_noise(const Shape& shape, std::uint64_t seed, const std::string& stream, std::uint64_t first_index) {
  Tensor<T> out(shape);
  const std::size_t per = out.size() / static_cast<std::size_t>(shape[0]);
  for (std::int64_t i = 0; i < shape[0]; ++i) {
    Rng rng(seed, stream, first_index + static_cast<std::uint64_t>(i));
    rng.fill_normal(std::span<T>(out.data() + static_cast<std::size_t>(i) * per, per));
  }
  return out;
}

template <typename T>
Tensor<T> sample(const Tensor<T>& z, const SamplerConfig& cfg, const VelocityFn<T>& velocity, int f,
                 const Tensor<T>& x1, std::uint64_t noise_seed, std::uint64_t first_index) {
  cfg.validate();
  const Tensor<T> cond = condition_upsample(z, f);
  if (x1.rank() != 4 || x1.dim(0) != z.dim(0) || x1.dim(2) != cond.dim(2) || x1.dim(3) != cond.dim(3))
    throw ShapeError("sample: initial noise " + shape_str(x1.shape()) + " does not match condition " +
                     shape_str(cond.shape()));
  const std::int64_t n = x1.dim(0);
  const std::size_t per = x1.size() / static_cast<std::size_t>(n);
  Tensor<T> x = x1;
  std::vector<T> tk(static_cast<std::size_t>(n));
  const double churn = cfg.stochastic ? cfg.churn : 0.0;
  const double keep = std::sqrt(1.0 - churn * churn);

  for (int k = cfg.num_steps; k >= 1; --k) {
    const double t_now = static_cast<double>(k) / cfg.num_steps;
    const double t_next = static_cast<double>(k - 1) / cfg.num_steps;
    std::fill(tk.begin(), tk.end(), static_cast<T>(t_now));
    const Tensor<T> v = velocity(x, std::span<const T>(tk), cond);
    require_same_shape(v.shape(), x.shape(), "sample(velocity)");
    if (churn == 0.0 || k == 1) {
      const T dt = static_cast<T>(t_now - t_next);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dt * v[i];
      continue;
    }
    // Split the state into predicted clean image and predicted noise, refresh
    // part of the noise, and re-noise to the interpolation marginal at t_next.
    for (std::int64_t item = 0; item < n; ++item) {
      Rng rng(noise_seed, cfg.rng_stream + "/churn", (first_index + static_cast<std::uint64_t>(item)) * 100003u +
                                                         static_cast<std::uint64_t>(k));
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t i = static_cast<std::size_t>(item) * per + j;
        const double x0p = x[i] - t_now * v[i];
        const double epsp = x[i] + (1.0 - t_now) * v[i];
        const double eps_new = keep * epsp + churn * rng.normal();
        x[i] = static_cast<T>((1.0 - t_next) * x0p + t_next * eps_new);
      }
    }
  }
  for (auto& v : x.values()) v = std::clamp(v, T(-1), T(1));
  return x;
}

#define DGAE_INSTANTIATE(T)                                                                                   \
  template Tensor<T> forward_noise(const Tensor<T>&, const Tensor<T>&, std::span<const T>);                   \
  template Tensor<T> predict_x0(const Tensor<T>&, std::span<const T>, const Tensor<T>&);                      \
  template ag::Var<T> predict_x0(ag::Var<T>, std::span<const T>, ag::Var<T>);                                 \
  template Tensor<T> score_from_velocity(const Tensor<T>&, const Tensor<T>&, std::span<const T>);             \
  template Tensor<T> per_item_noise(const Shape&, std::uint64_t, const std::string&, std::uint64_t);          \
  template Tensor<T> sample(const Tensor<T>&, const SamplerConfig&, const VelocityFn<T>&, int, const Tensor<T>&, \
                            std::uint64_t, std::uint64_t);

DGAE_INSTANTIATE(float)
DGAE_INSTANTIATE(double)
#undef DGAE_INSTANTIATE

}  // namespace dgae
