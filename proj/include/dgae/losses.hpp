// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Each loss exists as a tape operation (Var in, scalar
// Var out) for training and gradient checks, plus a plain-tensor evaluation.
#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>

#include "dgae/autograd.hpp"
#include "dgae/nets.hpp"
#include "dgae/params.hpp"
#include "dgae/rng.hpp"

namespace dgae {

struct LossWeights {
  double alpha = 1.0;   // reconstruction (L2) or denoising score matching
  double beta = 1e-6;   // KL
  double eta = 0.1;     // perceptual
  double lambda = 0.5;  // GAN, baseline only

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> terms;
  std::int64_t step = 0;
};

struct VaeTerms {
  double rec = 0, kl = 0, lpips = 0, gan = 0;
};

struct DgaeTerms {
  double dsm = 0, kl = 0, lpips = 0;
};

/// alpha*rec + beta*kl + eta*lpips + lambda*gan.
LossReport vae_total_loss(const VaeTerms& terms, const LossWeights& w);
/// alpha*dsm + beta*kl + eta*lpips; a nonzero lambda is a configuration error.
LossReport dgae_total_loss(const DgaeTerms& terms, const LossWeights& w);

/// Per-sample weighting lambda(t) of the score matching term.
using TimeWeightFn = std::function<double(double)>;
inline double uniform_time_weight(double) { return 1.0; }

/// Marks a feature-extractor parameter set as trained and frozen.
template <typename T>
void mark_trained(ModelParams<T>& params, std::int64_t steps);
/// Throws ConfigError unless the parameters carry trained provenance.
template <typename T>
void require_trained_features(const ModelParams<T>& params);

namespace losses {

template <typename T>
ag::Var<T> kl_divergence(ag::Var<T> mu, ag::Var<T> logvar);

template <typename T>
ag::Var<T> l2_reconstruction(ag::Var<T> x, ag::Var<T> x_hat);

/// Mean of lambda(t) * ||v_pred - (eps - x0)||^2 (element mean, then batch mean).
template <typename T>
ag::Var<T> dsm_velocity_loss(ag::Var<T> v_pred, ag::Var<T> x0, ag::Var<T> eps, std::span<const T> t,
                             const TimeWeightFn& weight = uniform_time_weight);

/// Sum over feature depths of the MSE between spatially unit-normalized maps.
template <typename T>
ag::Var<T> perceptual_loss(ag::Var<T> x0_pred, ag::Var<T> x, const FeatureNetConfig& cfg,
                           const BoundParams<T>& feat);

/// Hinge losses: d = mean(relu(1 - real)) + mean(relu(1 + fake)), g = -mean(fake).
template <typename T>
ag::Var<T> hinge_d_loss(ag::Var<T> logits_real, ag::Var<T> logits_fake);
template <typename T>
ag::Var<T> hinge_g_loss(ag::Var<T> logits_fake);

}  // namespace losses

// Plain tensor evaluations -----------------------------------------------------

double kl_divergence(const LatentPosterior<float>& post);
double kl_divergence(const LatentPosterior<double>& post);
template <typename T>
double l2_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat);
template <typename T>
double dsm_velocity_loss(const Tensor<T>& v_pred, const Tensor<T>& x0, const Tensor<T>& eps, std::span<const T> t,
                         const TimeWeightFn& weight = uniform_time_weight);
template <typename T>
double perceptual_loss(const Tensor<T>& x0_pred, const Tensor<T>& x, const FeatureNetConfig& cfg,
                       const ModelParams<T>& feat_params);
/// (d_loss, g_loss)
template <typename T>
std::pair<double, double> gan_hinge_losses(const Tensor<T>& logits_real, const Tensor<T>& logits_fake);

/// log N(x; mean, sigma^2 I), summed over all elements.
double gaussian_log_likelihood(std::span<const double> x, std::span<const double> mean, double sigma);

struct MonteCarloEstimate {
  double mean = 0;
  double std_error = 0;
  int samples = 0;
};

/// (1/J) sum_j log p(x | z_j), z_j drawn from the posterior by reparameterization.
MonteCarloEstimate elbo_monte_carlo(
    const TensorD& x, const std::function<LatentPosterior<double>(const TensorD&)>& encoder,
    const std::function<double(const TensorD& x, const TensorD& z)>& log_likelihood, int num_samples, Rng& rng);

}  // namespace dgae
