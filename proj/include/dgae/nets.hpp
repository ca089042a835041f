// SPDX-License-Identifier: Apache-2.0
//
// Network definitions: VAE encoder, conditional velocity U-Net, mirror
// Gaussian decoder, patch discriminator, perceptual feature extractor and the
// MLP flow model used on flattened latents.
//
// Each network has an `*_architecture(cfg)` that lists its layers and
// parameter shapes, and a forward pass that looks parameters up by name on a
// BoundParams. Parameter counts therefore follow from the config alone.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgae/autograd.hpp"
#include "dgae/params.hpp"

namespace dgae {

struct EncoderConfig {
  int downsample_factor = 8;  // f
  int latent_channels = 4;    // c
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 2, 4};
  int res_blocks_per_level = 1;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  void validate() const;
};

struct UNetConfig {
  int base_channels = 16;
  int time_emb_dim = 64;
  std::vector<int> channel_multipliers{1, 2, 2};
  int res_blocks_per_level = 1;
  int cond_channels = 4;

  void validate() const;
};

enum class DiscScale { kS, kM, kL };

struct DiscriminatorConfig {
  int base_channels = 32;
  int layers = 3;

  static DiscriminatorConfig from_scale(DiscScale s);
  void validate() const;
};

struct FeatureNetConfig {
  int num_shape_classes = 4;
  int num_color_classes = 4;
  std::vector<int> channels{16, 32, 64};
};

struct LatentGenConfig {
  int latent_dim = 64;
  int hidden = 256;
  int blocks = 4;
  int time_emb_dim = 64;
};

std::string to_string(DiscScale s);
DiscScale parse_disc_scale(const std::string& s);

/// 32 groups, or the largest divisor of the channel count below that.
int norm_groups(std::int64_t channels);

Architecture encoder_architecture(const EncoderConfig& cfg);
Architecture gaussian_decoder_architecture(const EncoderConfig& cfg);
Architecture unet_architecture(const UNetConfig& cfg);
Architecture discriminator_architecture(const DiscriminatorConfig& cfg);
Architecture feature_net_architecture(const FeatureNetConfig& cfg);
Architecture latent_gen_architecture(const LatentGenConfig& cfg);

template <typename T>
struct LatentPosterior {
  Tensor<T> mu;
  Tensor<T> logvar;
};

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

template <typename T>
struct EncoderOutput {
  ag::Var<T> raw;     // 2c channels, before the split
  ag::Var<T> mu;
  ag::Var<T> logvar;  // clamped to [kLogvarMin, kLogvarMax]
};

template <typename T>
struct FeatureOutput {
  std::vector<ag::Var<T>> features;  // post-activation maps of each block
  ag::Var<T> shape_logits;
  ag::Var<T> color_logits;
};

template <typename T>
EncoderOutput<T> encoder_forward(ag::Var<T> x, const EncoderConfig& cfg, const BoundParams<T>& p);

/// z [N,c,h,w] -> cond [N,c,h*f,w*f] by block replication.
template <typename T>
ag::Var<T> condition_upsample(ag::Var<T> z, int f);

/// Sinusoidal features of 1000*t: first half sines, second half cosines,
/// frequency k = 10000^(-k/half).
template <typename T>
Tensor<T> timestep_embedding(std::span<const T> t, int dim);

template <typename T>
ag::Var<T> unet_forward(ag::Var<T> x_t, std::span<const T> t, ag::Var<T> cond, const UNetConfig& cfg,
                        const BoundParams<T>& p);

template <typename T>
ag::Var<T> gaussian_decoder_forward(ag::Var<T> z, const EncoderConfig& cfg, const BoundParams<T>& p);

template <typename T>
ag::Var<T> discriminator_forward(ag::Var<T> x, const DiscriminatorConfig& cfg, const BoundParams<T>& p);

template <typename T>
FeatureOutput<T> feature_net_forward(ag::Var<T> x, const FeatureNetConfig& cfg, const BoundParams<T>& p);

/// Velocity field over flattened latents [N, latent_dim].
template <typename T>
ag::Var<T> latent_gen_forward(ag::Var<T> x, std::span<const T> t, const LatentGenConfig& cfg,
                              const BoundParams<T>& p);

// Tensor-in / tensor-out conveniences for inference.
template <typename T>
LatentPosterior<T> encode(const Tensor<T>& x, const EncoderConfig& cfg, const ModelParams<T>& params);

template <typename T>
Tensor<T> reparameterize(const LatentPosterior<T>& post, const Tensor<T>& noise);

template <typename T>
Tensor<T> condition_upsample(const Tensor<T>& z, int f);

template <typename T>
Tensor<T> unet_velocity(const Tensor<T>& x_t, std::span<const T> t, const Tensor<T>& cond, const UNetConfig& cfg,
                        const ModelParams<T>& params);

template <typename T>
Tensor<T> gaussian_decode(const Tensor<T>& z, const EncoderConfig& cfg, const ModelParams<T>& params);

template <typename T>
Tensor<T> discriminate(const Tensor<T>& x, const DiscriminatorConfig& cfg, const ModelParams<T>& params);

/// Global-mean-pooled deepest feature block, [N, channels.back()].
template <typename T>
Tensor<T> feature_embedding(const Tensor<T>& x, const FeatureNetConfig& cfg, const ModelParams<T>& params);

}  // namespace dgae
