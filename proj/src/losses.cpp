// SPDX-License-Identifier: Apache-2.0
#include "dgae/losses.hpp"

#include <cmath>
#include <numbers>

namespace dgae {

using ag::Var;

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {{"alpha", alpha}, {"beta", beta}, {"eta", eta}, {"lambda", lambda}};
  for (const auto& [name, v] : all)
    if (!std::isfinite(v) || v < 0.0)
      throw ConfigError(std::string("loss.") + name + " must be finite and >= 0 (got " + std::to_string(v) + ")");
}

LossReport vae_total_loss(const VaeTerms& t, const LossWeights& w) {
  w.validate();
  LossReport r;
  r.terms = {{"rec", t.rec}, {"kl", t.kl}, {"lpips", t.lpips}, {"gan", t.gan}};
  r.total = w.alpha * t.rec + w.beta * t.kl + w.eta * t.lpips + w.lambda * t.gan;
  return r;
}

LossReport dgae_total_loss(const DgaeTerms& t, const LossWeights& w) {
  w.validate();
  if (w.lambda != 0.0) throw ConfigError("loss.lambda must be 0 for the diffusion-guided objective (no GAN term)");
  LossReport r;
  r.terms = {{"dsm", t.dsm}, {"kl", t.kl}, {"lpips", t.lpips}};
  r.total = w.alpha * t.dsm + w.beta * t.kl + w.eta * t.lpips;
  return r;
}

template <typename T>
void mark_trained(ModelParams<T>& params, std::int64_t steps) {
  params.tags["trained"] = "true";
  params.tags["train_steps"] = std::to_string(steps);
}

template <typename T>
void require_trained_features(const ModelParams<T>& params) {
  auto it = params.tags.find("trained");
  if (it == params.tags.end() || it->second != "true")
    throw ConfigError("perceptual feature extractor has no trained provenance; train it first");
}

namespace losses {

template <typename T>
Var<T> kl_divergence(Var<T> mu, Var<T> logvar) {
  if (!mu.value().all_finite() || !logvar.value().all_finite())
    throw NumericError("kl_divergence: non-finite posterior parameters");
  return ag::kl_standard_normal(mu, logvar);
}

template <typename T>
Var<T> l2_reconstruction(Var<T> x, Var<T> x_hat) {
  return ag::mse(x_hat, x);
}

template <typename T>
Var<T> dsm_velocity_loss(Var<T> v_pred, Var<T> x0, Var<T> eps, std::span<const T> t, const TimeWeightFn& weight) {
  std::vector<T> w(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] > T(0) && t[i] <= T(1)))
      throw DomainError("dsm_velocity_loss: t must lie in (0, 1], got " + std::to_string(static_cast<double>(t[i])));
    w[i] = static_cast<T>(weight(static_cast<double>(t[i])));
  }
  const Var<T> target = ag::sub(eps, x0);
  return ag::weighted_mse_per_sample(v_pred, target, std::span<const T>(w));
}

template <typename T>
Var<T> perceptual_loss(Var<T> x0_pred, Var<T> x, const FeatureNetConfig& cfg, const BoundParams<T>& feat) {
  require_same_shape(x0_pred.shape(), x.shape(), "perceptual_loss");
  const FeatureOutput<T> fa = feature_net_forward(x0_pred, cfg, feat);
  const FeatureOutput<T> fb = feature_net_forward(x, cfg, feat);
  Var<T> total;
  for (std::size_t d = 0; d < fa.features.size(); ++d) {
    Var<T> term = ag::mse(ag::normalize_spatial(fa.features[d]), ag::normalize_spatial(fb.features[d]));
    total = total.valid() ? ag::add(total, term) : term;
  }
  return total;
}

template <typename T>
Var<T> hinge_d_loss(Var<T> logits_real, Var<T> logits_fake) {
  const Var<T> real_term = ag::mean(ag::relu(ag::add_scalar(ag::scale(logits_real, T(-1)), T(1))));
  const Var<T> fake_term = ag::mean(ag::relu(ag::add_scalar(logits_fake, T(1))));
  return ag::add(real_term, fake_term);
}

template <typename T>
Var<T> hinge_g_loss(Var<T> logits_fake) {
  return ag::scale(ag::mean(logits_fake), T(-1));
}

}  // namespace losses

namespace {
template <typename T>
double kl_impl(const LatentPosterior<T>& post) {
  ag::Tape<T> tape;
  return static_cast<double>(losses::kl_divergence(tape.constant(post.mu), tape.constant(post.logvar)).value()[0]);
}
}  // namespace

double kl_divergence(const LatentPosterior<float>& post) { return kl_impl(post); }
double kl_divergence(const LatentPosterior<double>& post) { return kl_impl(post); }

template <typename T>
double l2_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat) {
  ag::Tape<T> tape;
  return static_cast<double>(losses::l2_reconstruction(tape.constant(x), tape.constant(x_hat)).value()[0]);
}

template <typename T>
double dsm_velocity_loss(const Tensor<T>& v_pred, const Tensor<T>& x0, const Tensor<T>& eps, std::span<const T> t,
                         const TimeWeightFn& weight) {
  ag::Tape<T> tape;
  return static_cast<double>(
      losses::dsm_velocity_loss(tape.constant(v_pred), tape.constant(x0), tape.constant(eps), t, weight).value()[0]);
}

template <typename T>
double perceptual_loss(const Tensor<T>& x0_pred, const Tensor<T>& x, const FeatureNetConfig& cfg,
                       const ModelParams<T>& feat_params) {
  require_trained_features(feat_params);
  ag::Tape<T> tape;
  BoundParams<T> p(tape, feat_params, false);
  return static_cast<double>(losses::perceptual_loss(tape.constant(x0_pred), tape.constant(x), cfg, p).value()[0]);
}

template <typename T>
std::pair<double, double> gan_hinge_losses(const Tensor<T>& logits_real, const Tensor<T>& logits_fake) {
  if (!logits_real.all_finite() || !logits_fake.all_finite()) throw NumericError("gan_hinge_losses: non-finite logits");
  ag::Tape<T> tape;
  const Var<T> fake = tape.constant(logits_fake);
  const double d = losses::hinge_d_loss(tape.constant(logits_real), fake).value()[0];
  const double g = losses::hinge_g_loss(fake).value()[0];
  return {d, g};
}

double gaussian_log_likelihood(std::span<const double> x, std::span<const double> mean, double sigma) {
  if (x.size() != mean.size()) throw ShapeError("gaussian_log_likelihood: size mismatch");
  const double var = sigma * sigma;
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    acc += d * d / var + std::log(2.0 * std::numbers::pi * var);
  }
  return -0.5 * acc;
}

MonteCarloEstimate elbo_monte_carlo(const TensorD& x,
                                    const std::function<LatentPosterior<double>(const TensorD&)>& encoder,
                                    const std::function<double(const TensorD&, const TensorD&)>& log_likelihood,
                                    int num_samples, Rng& rng) {
  if (num_samples < 1) throw ConfigError("elbo_monte_carlo: J must be >= 1");
  const LatentPosterior<double> post = encoder(x);
  double sum = 0, sq = 0;
  TensorD noise(post.mu.shape());
  for (int j = 0; j < num_samples; ++j) {
    rng.fill_normal(noise.values());
    const double ll = log_likelihood(x, reparameterize(post, noise));
    sum += ll;
    sq += ll * ll;
  }
  MonteCarloEstimate est;
  est.samples = num_samples;
  est.mean = sum / num_samples;
  if (num_samples > 1) {
    const double var = std::max(0.0, (sq - num_samples * est.mean * est.mean) / (num_samples - 1));
    est.std_error = std::sqrt(var / num_samples);
  }
  return est;
}

#define DGAE_INSTANTIATE(T)                                                                                     \
  template void mark_trained(ModelParams<T>&, std::int64_t);                                                    \
  template void require_trained_features(const ModelParams<T>&);                                                \
  template Var<T> losses::kl_divergence(Var<T>, Var<T>);                                                        \
  template Var<T> losses::l2_reconstruction(Var<T>, Var<T>);                                                    \
  template Var<T> losses::dsm_velocity_loss(Var<T>, Var<T>, Var<T>, std::span<const T>, const TimeWeightFn&);   \
  template Var<T> losses::perceptual_loss(Var<T>, Var<T>, const FeatureNetConfig&, const BoundParams<T>&);      \
  template Var<T> losses::hinge_d_loss(Var<T>, Var<T>);                                                         \
  template Var<T> losses::hinge_g_loss(Var<T>);                                                                 \
  template double l2_reconstruction(const Tensor<T>&, const Tensor<T>&);                                        \
  template double dsm_velocity_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const T>,   \
                                    const TimeWeightFn&);                                                       \
  template double perceptual_loss(const Tensor<T>&, const Tensor<T>&, const FeatureNetConfig&,                  \
                                  const ModelParams<T>&);                                                       \
  template std::pair<double, double> gan_hinge_losses(const Tensor<T>&, const Tensor<T>&);

DGAE_INSTANTIATE(float)
DGAE_INSTANTIATE(double)
#undef DGAE_INSTANTIATE

}  // namespace dgae
