// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction and latent-space metrics. Images are [-1, 1] NCHW batches
// and are rescaled to [0, 1] internally.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "dgae/nets.hpp"
#include "dgae/tensor.hpp"

namespace dgae {

struct PerImage {
  std::vector<double> values;
  double mean = 0;
};

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) on [0, 1]-rescaled images, capped at 100 dB.
PerImage psnr(const TensorF& x, const TensorF& x_hat);

/// Single-scale SSIM on luma (0.299 R + 0.587 G + 0.114 B), 11x11 Gaussian window
/// with sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1, averaged over valid positions.
PerImage ssim(const TensorF& x, const TensorF& x_hat);
/// SSIM of two single-channel [H, W] images already in [0, 1].
double ssim_gray(const std::vector<double>& a, const std::vector<double>& b, int h, int w);

/// Running sums for a Gaussian fit; shards merge order-independently.
class GaussianStats {
 public:
  explicit GaussianStats(int dim = 0);
  void add(const double* row);
  void add_rows(const TensorF& rows);  // [N, dim]
  void merge(const GaussianStats& other);
  std::int64_t count() const { return count_; }
  Eigen::VectorXd mean() const;
  /// Unbiased covariance.
  Eigen::MatrixXd covariance() const;

 private:
  int dim_;
  std::int64_t count_ = 0;
  Eigen::VectorXd sum_;
  Eigen::MatrixXd outer_;
};

inline constexpr double kFrechetRegularization = 1e-6;

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of the square root
/// comes from the eigenvalues of the symmetric product S_a^{1/2} S_b S_a^{1/2}; both
/// covariances get +1e-6 on the diagonal.
double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& cov_b);

/// Frechet distance between feature-net embeddings (mean-pooled deepest block).
double frechet_feature_distance(const TensorF& set_a, const TensorF& set_b, const FeatureNetConfig& cfg,
                                const ModelParams<float>& feat_params);

/// Mean absolute vertical plus horizontal neighbour difference on per-channel
/// standardized latents, averaged over batch and channels.
double latent_total_variation(const TensorF& z);

struct LatentProjection {
  Eigen::VectorXd mean;     // [C]
  Eigen::MatrixXd basis;    // [3, C], rows are principal directions (zero rows when C < 3)
  Eigen::Vector3d lo, hi;   // per-component range over the fitting set
};

/// Fits a 3-component PCA over channel vectors pooled from all sets.
LatentProjection fit_latent_projection(const std::vector<const TensorF*>& z_sets);
/// Raw component scores [N, 3, h, w] (no normalization).
TensorF project_latents(const LatentProjection& proj, const TensorF& z);
/// Component scores min-max normalized to [0, 1] using the projection's range;
/// zero-range components map to 0.5.
TensorF latent_rgb(const LatentProjection& proj, const TensorF& z);
/// Fit on z_set alone and return RGB images in [0, 1], [N, 3, h, w].
TensorF latent_rgb_projection(const TensorF& z_set);

}  // namespace dgae
