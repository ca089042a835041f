// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the DGAE, the GAN-guided VAE baseline, the frozen
// feature extractor and the latent flow generator.
//
// Every random draw of step s comes from a substream keyed by (seed, name, s):
// "batch" (epoch permutations), "aug", "z", "t", "eps". A run resumed from
// the checkpoint at step k therefore replays steps k+1... exactly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dgae/checkpoint.hpp"
#include "dgae/config.hpp"
#include "dgae/data.hpp"
#include "dgae/optim.hpp"

namespace dgae {

/// One logged row. Absent terms (e.g. gan_d on a generator step) are missing from `terms`.
struct StepLog {
  std::int64_t step = 0;  // 1-based index of the update just applied
  double lr = 0;
  double total = 0;
  std::map<std::string, double> terms;  // dsm, rec, kl, lpips, gan_g, gan_d
};

/// Everything needed to continue a run.
struct TrainState {
  std::int64_t step = 0;  // completed updates
  std::map<std::string, ModelParams<float>> nets;
  std::map<std::string, OptimizerState<float>> opt;
  std::int64_t collapse_run = 0;  // consecutive discriminator updates with d_loss < 1e-4
  bool collapse_flagged = false;
};

inline constexpr double kCollapseThreshold = 1e-4;
inline constexpr std::int64_t kCollapseSteps = 500;

/// Network names used in TrainState and checkpoints.
inline const std::string kEncoder = "encoder";
inline const std::string kUNet = "unet";
inline const std::string kDecoder = "decoder";
inline const std::string kDisc = "disc";
inline const std::string kFeatures = "features";
inline const std::string kLatentGen = "latent_gen";

/// Fresh parameters and optimizer moments for cfg.kind.
TrainState init_train_state(const RunConfig& cfg);

/// Dataset indices of the batch used by update `step` (0-based): consecutive slices of
/// per-epoch permutations drawn from (seed, "batch", epoch).
std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step, std::int64_t batch_size,
                                        std::int64_t dataset_size);

/// True when update `step` (0-based) of a baseline run trains the discriminator.
bool is_discriminator_step(const RunConfig& cfg, std::int64_t step);

/// Runs one update and advances state.step. `features` must carry trained provenance
/// whenever cfg.loss.eta > 0.
StepLog train_step(const RunConfig& cfg, const Dataset& data, const ModelParams<float>& features, TrainState& state);

/// Cross-entropy on (shape, color) labels; returns parameters tagged as trained.
ModelParams<float> train_feature_extractor(const FeatureNetConfig& net, const FeatureTrainConfig& tc,
                                           const Dataset& data, std::uint64_t seed,
                                           const std::function<void(std::int64_t, double)>& on_log = {});

// Checkpoints -----------------------------------------------------------------

Checkpoint make_checkpoint(const RunConfig& cfg, const TrainState& state, const ModelParams<float>& features);
/// Restores the training state; throws ConfigError when the checkpoint's config hash differs from cfg's.
TrainState restore_train_state(const Checkpoint& ckpt, const RunConfig& cfg);

/// Trained networks as stored in a checkpoint, for evaluation.
struct Autoencoder {
  RunConfig cfg;
  ModelParams<float> encoder;
  ModelParams<float> decoder;  // U-Net (dgae) or Gaussian decoder (baseline)
  ModelParams<float> features;
  std::string checkpoint_hash;
  std::int64_t step = 0;
};
Autoencoder load_autoencoder(const Checkpoint& ckpt);
/// Parses the config snapshot embedded in a checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);

// Driver ----------------------------------------------------------------------

struct TrainOptions {
  bool resume = true;
  std::int64_t stop_at = -1;  // stop after this many updates (-1 = total_steps)
  std::function<void(const StepLog&)> on_log;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::int64_t step = 0;
  std::vector<StepLog> logged;
  bool collapse_flagged = false;
};

inline const char* kTrainCsvSchema = "dgae.train/1";
inline const char* kTrainCsvHeader = "step,lr,total,term:dsm,term:kl,term:lpips,term:gan_g,term:gan_d,term:rec";

/// Full run into `dir`: generates the dataset, trains (or reuses) the feature extractor,
/// trains, logs every cfg.log_every updates to train.csv and writes checkpoints to
/// dir/ckpt.bin every cfg.ckpt_every updates and at the end. With resume, continues from
/// an existing dir/ckpt.bin. A non-finite loss throws NumericError naming the last
/// good checkpoint.
TrainResult train_run(const RunConfig& cfg, const std::filesystem::path& dir, const TrainOptions& opt = {});

/// Feature extractor for cfg, cached in `cache_dir` by a hash of its inputs.
ModelParams<float> obtain_feature_extractor(const RunConfig& cfg, const Dataset& data,
                                            const std::filesystem::path& cache_dir);

// Latent generator ----------------------------------------------------------------

struct ConvergencePoint {
  std::int64_t step = 0;
  double frechet = 0;         // feature-space, decoded samples vs real images
  double latent_frechet = 0;  // latent-space, samples vs encoded data
};

struct LatentGenResult {
  std::vector<ConvergencePoint> curve;
  ModelParams<float> params;
};

/// Flow matching on standardized, flattened posterior means of the training set.
/// Evaluates at step 0 and every eval_every steps: samples num_samples latents,
/// decodes the first decode_subset with the DGAE sampler and measures the feature
/// Frechet distance against `reference` real images.
LatentGenResult train_latent_generator(const Autoencoder& ae, const Dataset& data, const TensorF& reference,
                                       const std::function<void(const ConvergencePoint&)>& on_point = {});

/// Posterior means of `images`, evaluated in chunks.
TensorF encode_means(const TensorF& images, const EncoderConfig& cfg, const ModelParams<float>& encoder,
                     std::int64_t chunk = 64);

/// Reconstructions: DGAE sampler from per-item noise (noise_seed, "recon", first_index + i),
/// or the Gaussian decoder mean.
TensorF decode_latents(const Autoencoder& ae, const TensorF& z, std::uint64_t noise_seed, std::uint64_t first_index,
                       std::int64_t chunk = 64);

}  // namespace dgae
