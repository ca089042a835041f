// SPDX-License-Identifier: Apache-2.0
//
// Scenarios shared by the unit tests and the acceptance runner.
#pragma once

#include <string>
#include <vector>

#include "dgae/losses.hpp"
#include "support.hpp"

namespace dgae::test {

struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
  double min_fraction = 0.99;
  bool ok() const { return result.checked > 0 && result.pass_fraction() >= min_fraction; }
};

/// Every network at a tiny config, all parameters randomized, double precision.
std::vector<NamedGradCheck> network_gradient_checks(int samples = 200, double step = 1e-3, double rel_tol = 1e-3);

/// Every loss on small random tensors; every sampled coordinate must pass.
std::vector<NamedGradCheck> loss_gradient_checks(int samples = 200, double step = 1e-4, double rel_tol = 1e-4);

/// Largest |x_hat - x*| after Euler sampling with the exact point-mass velocity (x - x*)/t.
double point_mass_sampler_error(int steps, std::uint64_t seed);

/// 1-pixel toy: x, posterior N(0.5 x, 0.5^2), decoder mean a z + b with sigma 1.
struct ElboToy {
  double x = 0.8;
  double a = 0.2;
  double b = 0.6;
  double post_scale = 0.5;

  double closed_form() const;
  MonteCarloEstimate estimate(int samples, std::uint64_t seed) const;
};

/// Latents [10, 8, 3, 3] with correlated channels and a well separated spectrum.
TensorF pca_fixture();
/// Largest difference between fit_latent_projection scores on pca_fixture() and an
/// independent Jacobi-eigensolver PCA, after matching each component's sign.
double pca_oracle_error();

/// Two fixed 16x16 gray images in [0, 1].
std::vector<double> ssim_pattern_a();
std::vector<double> ssim_pattern_b();

}  // namespace dgae::test
