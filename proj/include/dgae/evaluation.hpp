// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction evaluation of a trained autoencoder on held-out images.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgae/training.hpp"

namespace dgae {

struct EvalReport {
  double psnr_mean = 0;
  double ssim_mean = 0;
  double frechet_distance = 0;
  double latent_tv = 0;
  std::int64_t num_images = 0;
  std::string model;
  std::string checkpoint_hash;
  std::string config_hash;
  std::int64_t train_step = 0;
  int sampler_steps = 0;
  std::uint64_t eval_seed = 0;

  /// `key=value` lines in a fixed order.
  std::string to_text() const;
};

/// Positions (sorted) within the held-out pool: the first `count` entries of a
/// permutation of [0, pool) drawn from (eval_seed, "eval_subset").
std::vector<std::int64_t> eval_subset(std::uint64_t eval_seed, std::int64_t pool, std::int64_t count);

/// Held-out images num_images + position, center-cropped to the run's crop size.
TensorF held_out_images(const RunConfig& cfg, const std::vector<std::int64_t>& positions);

/// Encodes with the posterior mean, decodes (sampler for dgae, Gaussian decoder mean for
/// the baseline; sampler noise from (eval_seed, "recon", position)), and scores
/// PSNR, SSIM, feature Frechet distance and latent total variation.
EvalReport evaluate_reconstruction(const Autoencoder& ae, const RunConfig& eval_cfg);

/// Same, returning the evaluated originals and reconstructions too.
EvalReport evaluate_reconstruction(const Autoencoder& ae, const RunConfig& eval_cfg, TensorF* originals,
                                   TensorF* reconstructions, TensorF* latents);

inline const char* kResultsCsvSchema = "dgae.results/1";
inline const char* kResultsCsvHeader =
    "model,config_hash,checkpoint_hash,train_step,eval_seed,sampler_steps,num_images,psnr,ssim,frechet,tv";

/// Appends one row to results.csv (creating it with schema + header if needed).
void append_results_row(const std::filesystem::path& csv, const EvalReport& r);

}  // namespace dgae
