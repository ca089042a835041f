// SPDX-License-Identifier: Apache-2.0
//
// RunConfig and its text format: one `key = value` per line, `#` comments,
// keys namespaced by section prefix (`encoder.f`, `loss.beta`, ...). Unknown
// keys, malformed values and out-of-range values are errors that name the key
// and the file:line they came from. `--set key=value` overrides apply after
// the file. Two presets expand into plain keys before explicit keys apply:
//
//   latent = f16c8          encoder.f = 16, encoder.c = 8
//   decoder.preset = B|M|L  decoder.base = 16|32|48, decoder.temb = 64|128|192
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgae/data.hpp"
#include "dgae/diffusion.hpp"
#include "dgae/losses.hpp"
#include "dgae/nets.hpp"
#include "dgae/optim.hpp"

namespace dgae {

enum class ModelKind { kDgae, kBaselineVae };
std::string to_string(ModelKind k);

struct FeatureTrainConfig {
  std::int64_t steps = 2000;
  std::int64_t batch_size = 64;
  double lr = 1e-3;
  std::int64_t warmup = 100;
};

struct EvalConfig {
  std::int64_t num_images = 512;
  /// Held-out images generated after the training range; the eval subset is drawn from these.
  std::int64_t pool = 1024;
  std::int64_t batch_size = 64;
};

struct LatentGenTrainConfig {
  LatentGenConfig net;
  std::int64_t steps = 5000;
  std::int64_t batch_size = 64;
  double lr_peak = 1e-3;
  std::int64_t warmup = 200;
  std::int64_t eval_every = 500;
  std::int64_t num_samples = 256;
  std::int64_t decode_subset = 32;
  int sample_steps = 50;
};

struct RunConfig {
  ModelKind kind = ModelKind::kDgae;
  std::string out_dir = "runs/default";

  std::uint64_t seed = 1;       // init, batches, noise
  std::uint64_t eval_seed = 0;  // eval subset and eval sampler noise

  DatasetSpec dataset;
  int crop_size = 0;  // 0 = image_size

  EncoderConfig encoder;
  std::string decoder_preset = "B";
  UNetConfig unet;
  DiscScale disc_scale = DiscScale::kM;
  std::int64_t disc_start = 2000;

  LossWeights loss;
  double t_min = 1e-3;
  OptimizerConfig optim;
  std::int64_t total_steps = 20000;
  std::int64_t batch_size = 32;
  std::int64_t log_every = 50;
  std::int64_t ckpt_every = 1000;

  SamplerConfig sampler;
  FeatureTrainConfig features;
  FeatureNetConfig feature_net;  // class counts follow the dataset
  EvalConfig eval;
  LatentGenTrainConfig latent_gen;

  int effective_crop() const { return crop_size == 0 ? dataset.image_size : crop_size; }
  void validate() const;
  /// Every key in sorted order, `key=value` per line; the input to hash().
  std::string canonical() const;
  /// First 16 hex digits of SHA-256(canonical()).
  std::string hash() const;
};

/// Channel multipliers used when encoder.mults is not given: one level per factor of 2, plus one.
std::vector<int> default_encoder_mults(int f);

RunConfig parse_config_text(const std::string& text, const std::string& origin,
                            const std::vector<std::string>& overrides = {});
RunConfig parse_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Feature extractor config derived from a run's dataset.
FeatureNetConfig feature_config(const RunConfig& cfg);

/// Names of all accepted keys (for --help).
std::vector<std::string> config_keys();

}  // namespace dgae
