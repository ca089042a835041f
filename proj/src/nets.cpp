// SPDX-License-Identifier: Apache-2.0
#include "dgae/nets.hpp"

#include <bit>
#include <cmath>

namespace dgae {

using ag::Var;

namespace {

void res_block_arch(Architecture& a, const std::string& name, std::int64_t in, std::int64_t out,
                    std::int64_t temb_dim) {
  a.norm(name + ".norm1", in);
  a.conv(name + ".conv1", in, out, 3, 1);
  if (temb_dim > 0) a.linear(name + ".temb_proj", temb_dim, out);
  a.norm(name + ".norm2", out);
  a.conv(name + ".conv2", out, out, 3, 1);
  if (in != out) a.conv(name + ".skip", in, out, 1, 1);
}

template <typename T>
Var<T> conv(Var<T> x, const BoundParams<T>& p, const std::string& name, int stride, int pad) {
  return ag::conv2d(x, p[name + ".weight"], p[name + ".bias"], stride, pad);
}

template <typename T>
Var<T> norm(Var<T> x, const BoundParams<T>& p, const std::string& name) {
  return ag::group_norm(x, p[name + ".gamma"], p[name + ".beta"], norm_groups(x.dim(1)));
}

template <typename T>
Var<T> dense(Var<T> x, const BoundParams<T>& p, const std::string& name) {
  return ag::linear(x, p[name + ".weight"], p[name + ".bias"]);
}

/// GN-SiLU-conv twice with an optional additive time projection in between.
template <typename T>
Var<T> res_block(Var<T> x, const BoundParams<T>& p, const std::string& name, const Var<T>* temb_act) {
  Var<T> h = conv(ag::silu(norm(x, p, name + ".norm1")), p, name + ".conv1", 1, 1);
  if (temb_act) h = ag::add_channel_vector(h, dense(*temb_act, p, name + ".temb_proj"));
  h = conv(ag::silu(norm(h, p, name + ".norm2")), p, name + ".conv2", 1, 1);
  const Var<T> skip = p.contains(name + ".skip.weight") ? conv(x, p, name + ".skip", 1, 0) : x;
  return ag::add(skip, h);
}

void require_spatial(const Shape& s, std::int64_t multiple, std::int64_t channels, const char* net) {
  if (s.size() != 4) throw ShapeError(std::string(net) + ": expected NCHW input, got " + shape_str(s));
  if (s[1] != channels)
    throw ShapeError(std::string(net) + ": input has " + std::to_string(s[1]) + " channels, expected " +
                     std::to_string(channels));
  if (s[2] % multiple != 0 || s[3] % multiple != 0)
    throw ShapeError(std::string(net) + ": spatial size " + shape_str(s) + " not divisible by " +
                     std::to_string(multiple));
}

int log2_exact(int f) { return std::countr_zero(static_cast<unsigned>(f)); }

}  // namespace

int norm_groups(std::int64_t channels) {
  for (std::int64_t g = std::min<std::int64_t>(32, channels); g > 1; --g)
    if (channels % g == 0) return static_cast<int>(g);
  return 1;
}

void EncoderConfig::validate() const {
  if (downsample_factor != 8 && downsample_factor != 16 && downsample_factor != 32)
    throw ConfigError("encoder.f must be one of 8, 16, 32 (got " + std::to_string(downsample_factor) + ")");
  if (levels() != log2_exact(downsample_factor) + 1)
    throw ConfigError("encoder.channel_multipliers needs log2(f)+1 = " +
                      std::to_string(log2_exact(downsample_factor) + 1) + " entries, got " +
                      std::to_string(levels()));
  if (latent_channels < 1) throw ConfigError("encoder.latent_channels must be >= 1");
  if (base_channels < 1) throw ConfigError("encoder.base_channels must be >= 1");
  if (res_blocks_per_level < 1) throw ConfigError("encoder.res_blocks_per_level must be >= 1");
  for (int m : channel_multipliers)
    if (m < 1) throw ConfigError("encoder.channel_multipliers entries must be >= 1");
}

void UNetConfig::validate() const {
  if (base_channels < 2 || base_channels % 2 != 0) throw ConfigError("decoder.base_channels must be even and >= 2");
  if (time_emb_dim < 1) throw ConfigError("decoder.time_emb_dim must be >= 1");
  if (channel_multipliers.empty()) throw ConfigError("decoder.channel_multipliers must not be empty");
  for (int m : channel_multipliers)
    if (m < 1) throw ConfigError("decoder.channel_multipliers entries must be >= 1");
  if (res_blocks_per_level < 1) throw ConfigError("decoder.res_blocks_per_level must be >= 1");
  if (cond_channels < 1) throw ConfigError("decoder.cond_channels must be >= 1");
}

DiscriminatorConfig DiscriminatorConfig::from_scale(DiscScale s) {
  switch (s) {
    case DiscScale::kS: return {32, 3};
    case DiscScale::kM: return {64, 3};
    case DiscScale::kL: return {128, 3};
  }
  return {};
}

void DiscriminatorConfig::validate() const {
  if (base_channels < 1 || layers < 1) throw ConfigError("discriminator: base_channels and layers must be >= 1");
}

std::string to_string(DiscScale s) {
  switch (s) {
    case DiscScale::kS: return "S";
    case DiscScale::kM: return "M";
    case DiscScale::kL: return "L";
  }
  return "?";
}

DiscScale parse_disc_scale(const std::string& s) {
  if (s == "S") return DiscScale::kS;
  if (s == "M") return DiscScale::kM;
  if (s == "L") return DiscScale::kL;
  throw ConfigError("discriminator scale must be S, M or L (got '" + s + "')");
}

// Architectures -------------------------------------------------------------

Architecture encoder_architecture(const EncoderConfig& cfg) {
  Architecture a;
  std::int64_t ch = cfg.base_channels * cfg.channel_multipliers[0];
  a.conv("conv_in", 3, ch, 3, 1);
  for (int l = 0; l < cfg.levels(); ++l) {
    const std::int64_t out = cfg.base_channels * cfg.channel_multipliers[static_cast<std::size_t>(l)];
    for (int r = 0; r < cfg.res_blocks_per_level; ++r) {
      res_block_arch(a, "down." + std::to_string(l) + ".block." + std::to_string(r), ch, out, 0);
      ch = out;
    }
    if (l + 1 < cfg.levels()) a.conv("down." + std::to_string(l) + ".downsample", ch, ch, 3, 2);
  }
  res_block_arch(a, "mid.block", ch, ch, 0);
  a.norm("norm_out", ch);
  a.conv("conv_out", ch, 2 * cfg.latent_channels, 3, 1);
  return a;
}

Architecture gaussian_decoder_architecture(const EncoderConfig& cfg) {
  Architecture a;
  std::int64_t ch = cfg.base_channels * cfg.channel_multipliers.back();
  a.conv("conv_in", cfg.latent_channels, ch, 3, 1);
  res_block_arch(a, "mid.block", ch, ch, 0);
  for (int l = cfg.levels() - 1; l >= 0; --l) {
    const std::int64_t out = cfg.base_channels * cfg.channel_multipliers[static_cast<std::size_t>(l)];
    for (int r = 0; r < cfg.res_blocks_per_level; ++r) {
      res_block_arch(a, "up." + std::to_string(l) + ".block." + std::to_string(r), ch, out, 0);
      ch = out;
    }
    if (l > 0) a.conv("up." + std::to_string(l) + ".upsample", ch, ch, 3, 1);
  }
  a.norm("norm_out", ch);
  a.conv("conv_out", ch, 3, 3, 1);
  return a;
}

Architecture unet_architecture(const UNetConfig& cfg) {
  Architecture a;
  const std::int64_t temb = cfg.time_emb_dim;
  a.linear("time.fc1", cfg.base_channels, temb);
  a.linear("time.fc2", temb, temb);
  const auto levels = static_cast<int>(cfg.channel_multipliers.size());
  std::int64_t ch = cfg.base_channels * cfg.channel_multipliers[0];
  a.conv("conv_in", 3 + cfg.cond_channels, ch, 3, 1);
  std::vector<std::int64_t> skips{ch};
  for (int l = 0; l < levels; ++l) {
    const std::int64_t out = cfg.base_channels * cfg.channel_multipliers[static_cast<std::size_t>(l)];
    for (int r = 0; r < cfg.res_blocks_per_level; ++r) {
      res_block_arch(a, "down." + std::to_string(l) + ".block." + std::to_string(r), ch, out, temb);
      ch = out;
      skips.push_back(ch);
    }
    if (l + 1 < levels) {
      a.conv("down." + std::to_string(l) + ".downsample", ch, ch, 3, 2);
      skips.push_back(ch);
    }
  }
  res_block_arch(a, "mid.block1", ch, ch, temb);
  res_block_arch(a, "mid.block2", ch, ch, temb);
  for (int l = levels - 1; l >= 0; --l) {
    const std::int64_t out = cfg.base_channels * cfg.channel_multipliers[static_cast<std::size_t>(l)];
    for (int r = 0; r <= cfg.res_blocks_per_level; ++r) {
      const std::int64_t skip = skips.back();
      skips.pop_back();
      res_block_arch(a, "up." + std::to_string(l) + ".block." + std::to_string(r), ch + skip, out, temb);
      ch = out;
    }
    if (l > 0) a.conv("up." + std::to_string(l) + ".upsample", ch, ch, 3, 1);
  }
  a.norm("norm_out", ch);
  a.conv("conv_out", ch, 3, 3, 1, /*zero_init=*/true);
  return a;
}

Architecture discriminator_architecture(const DiscriminatorConfig& cfg) {
  Architecture a;
  std::int64_t ch = 3;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::int64_t out = static_cast<std::int64_t>(cfg.base_channels) << l;
    a.conv("conv." + std::to_string(l), ch, out, 4, 2);
    ch = out;
  }
  a.conv("out", ch, 1, 3, 1);
  return a;
}

Architecture feature_net_architecture(const FeatureNetConfig& cfg) {
  Architecture a;
  std::int64_t ch = 3;
  for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
    a.conv("block." + std::to_string(b), ch, cfg.channels[b], 3, 2);
    ch = cfg.channels[b];
  }
  a.linear("head.shape", ch, cfg.num_shape_classes);
  a.linear("head.color", ch, cfg.num_color_classes);
  return a;
}

Architecture latent_gen_architecture(const LatentGenConfig& cfg) {
  Architecture a;
  a.linear("time.fc1", cfg.time_emb_dim, cfg.hidden);
  a.linear("time.fc2", cfg.hidden, cfg.hidden);
  a.linear("in", cfg.latent_dim, cfg.hidden);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string name = "block." + std::to_string(b);
    a.norm(name + ".norm", cfg.hidden, "LayerNorm");
    a.linear(name + ".fc1", cfg.hidden, 2 * cfg.hidden);
    a.linear(name + ".temb_proj", cfg.hidden, 2 * cfg.hidden);
    a.linear(name + ".fc2", 2 * cfg.hidden, cfg.hidden);
  }
  a.norm("norm_out", cfg.hidden, "LayerNorm");
  a.linear("out", cfg.hidden, cfg.latent_dim, /*zero_init=*/true);
  return a;
}

// Forward passes ------------------------------------------------------------

template <typename T>
EncoderOutput<T> encoder_forward(Var<T> x, const EncoderConfig& cfg, const BoundParams<T>& p) {
  require_spatial(x.shape(), cfg.downsample_factor, 3, "encoder");
  Var<T> h = conv(x, p, "conv_in", 1, 1);
  for (int l = 0; l < cfg.levels(); ++l) {
    for (int r = 0; r < cfg.res_blocks_per_level; ++r)
      h = res_block(h, p, "down." + std::to_string(l) + ".block." + std::to_string(r), static_cast<const Var<T>*>(nullptr));
    if (l + 1 < cfg.levels()) h = conv(h, p, "down." + std::to_string(l) + ".downsample", 2, 1);
  }
  h = res_block(h, p, "mid.block", static_cast<const Var<T>*>(nullptr));
  h = conv(ag::silu(norm(h, p, "norm_out")), p, "conv_out", 1, 1);
  const std::int64_t c = cfg.latent_channels;
  Var<T> mu = ag::slice_channels(h, 0, c);
  Var<T> lv = ag::clamp(ag::slice_channels(h, c, c), static_cast<T>(kLogvarMin), static_cast<T>(kLogvarMax));
  return {h, mu, lv};
}

template <typename T>
Var<T> condition_upsample(Var<T> z, int f) {
  return ag::upsample_nearest(z, f);
}

template <typename T>
Tensor<T> timestep_embedding(std::span<const T> t, int dim) {
  const int half = dim / 2;
  Tensor<T> out(Shape{static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double arg0 = 1000.0 * static_cast<double>(t[i]);
    for (int k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
      out[i * dim + k] = static_cast<T>(std::sin(arg0 * freq));
      out[i * dim + half + k] = static_cast<T>(std::cos(arg0 * freq));
    }
  }
  return out;
}

template <typename T>
Var<T> unet_forward(Var<T> x_t, std::span<const T> t, Var<T> cond, const UNetConfig& cfg,
                    const BoundParams<T>& p) {
  const auto levels = static_cast<int>(cfg.channel_multipliers.size());
  require_spatial(x_t.shape(), std::int64_t{1} << (levels - 1), 3, "unet");
  if (cond.value().rank() != 4 || cond.dim(0) != x_t.dim(0) || cond.dim(2) != x_t.dim(2) ||
      cond.dim(3) != x_t.dim(3) || cond.dim(1) != cfg.cond_channels)
    throw ShapeError("unet: condition " + shape_str(cond.shape()) + " incompatible with x_t " + shape_str(x_t.shape()));
  if (static_cast<std::int64_t>(t.size()) != x_t.dim(0)) throw ShapeError("unet: one time value per batch element");

  ag::Tape<T>& tape = *x_t.tape;
  Var<T> temb = tape.constant(timestep_embedding<T>(t, cfg.base_channels));
  temb = dense(ag::silu(dense(temb, p, "time.fc1")), p, "time.fc2");
  const Var<T> temb_act = ag::silu(temb);

  Var<T> h = conv(ag::concat_channels(x_t, cond), p, "conv_in", 1, 1);
  std::vector<Var<T>> skips{h};
  for (int l = 0; l < levels; ++l) {
    for (int r = 0; r < cfg.res_blocks_per_level; ++r) {
      h = res_block(h, p, "down." + std::to_string(l) + ".block." + std::to_string(r), &temb_act);
      skips.push_back(h);
    }
    if (l + 1 < levels) {
      h = conv(h, p, "down." + std::to_string(l) + ".downsample", 2, 1);
      skips.push_back(h);
    }
  }
  h = res_block(h, p, "mid.block1", &temb_act);
  h = res_block(h, p, "mid.block2", &temb_act);
  for (int l = levels - 1; l >= 0; --l) {
    for (int r = 0; r <= cfg.res_blocks_per_level; ++r) {
      h = ag::concat_channels(h, skips.back());
      skips.pop_back();
      h = res_block(h, p, "up." + std::to_string(l) + ".block." + std::to_string(r), &temb_act);
    }
    if (l > 0) h = conv(ag::upsample_nearest(h, 2), p, "up." + std::to_string(l) + ".upsample", 1, 1);
  }
  return conv(ag::silu(norm(h, p, "norm_out")), p, "conv_out", 1, 1);
}

template <typename T>
Var<T> gaussian_decoder_forward(Var<T> z, const EncoderConfig& cfg, const BoundParams<T>& p) {
  require_spatial(z.shape(), 1, cfg.latent_channels, "gaussian decoder");
  Var<T> h = conv(z, p, "conv_in", 1, 1);
  h = res_block(h, p, "mid.block", static_cast<const Var<T>*>(nullptr));
  for (int l = cfg.levels() - 1; l >= 0; --l) {
    for (int r = 0; r < cfg.res_blocks_per_level; ++r)
      h = res_block(h, p, "up." + std::to_string(l) + ".block." + std::to_string(r), static_cast<const Var<T>*>(nullptr));
    if (l > 0) h = conv(ag::upsample_nearest(h, 2), p, "up." + std::to_string(l) + ".upsample", 1, 1);
  }
  return ag::tanh(conv(ag::silu(norm(h, p, "norm_out")), p, "conv_out", 1, 1));
}

template <typename T>
Var<T> discriminator_forward(Var<T> x, const DiscriminatorConfig& cfg, const BoundParams<T>& p) {
  require_spatial(x.shape(), std::int64_t{1} << cfg.layers, 3, "discriminator");
  Var<T> h = x;
  for (int l = 0; l < cfg.layers; ++l) h = ag::leaky_relu(conv(h, p, "conv." + std::to_string(l), 2, 1), T(0.2));
  return conv(h, p, "out", 1, 1);
}

template <typename T>
FeatureOutput<T> feature_net_forward(Var<T> x, const FeatureNetConfig& cfg, const BoundParams<T>& p) {
  require_spatial(x.shape(), std::int64_t{1} << cfg.channels.size(), 3, "feature extractor");
  FeatureOutput<T> out;
  Var<T> h = x;
  for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
    h = ag::silu(conv(h, p, "block." + std::to_string(b), 2, 1));
    out.features.push_back(h);
  }
  const Var<T> pooled = ag::mean_spatial(h);
  out.shape_logits = dense(pooled, p, "head.shape");
  out.color_logits = dense(pooled, p, "head.color");
  return out;
}

template <typename T>
Var<T> latent_gen_forward(Var<T> x, std::span<const T> t, const LatentGenConfig& cfg, const BoundParams<T>& p) {
  if (x.value().rank() != 2 || x.dim(1) != cfg.latent_dim)
    throw ShapeError("latent generator: expected [N, " + std::to_string(cfg.latent_dim) + "], got " +
                     shape_str(x.shape()));
  ag::Tape<T>& tape = *x.tape;
  Var<T> temb = tape.constant(timestep_embedding<T>(t, cfg.time_emb_dim));
  temb = ag::silu(dense(ag::silu(dense(temb, p, "time.fc1")), p, "time.fc2"));
  Var<T> h = dense(x, p, "in");
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string name = "block." + std::to_string(b);
    Var<T> u = ag::layer_norm(h, p[name + ".norm.gamma"], p[name + ".norm.beta"]);
    u = ag::add(dense(u, p, name + ".fc1"), dense(temb, p, name + ".temb_proj"));
    h = ag::add(h, dense(ag::silu(u), p, name + ".fc2"));
  }
  h = ag::layer_norm(h, p["norm_out.gamma"], p["norm_out.beta"]);
  return dense(h, p, "out");
}

// Conveniences --------------------------------------------------------------

template <typename T>
LatentPosterior<T> encode(const Tensor<T>& x, const EncoderConfig& cfg, const ModelParams<T>& params) {
  ag::Tape<T> tape;
  BoundParams<T> p(tape, params, false);
  auto out = encoder_forward(tape.constant(x), cfg, p);
  return {out.mu.value(), out.logvar.value()};
}

template <typename T>
Tensor<T> reparameterize(const LatentPosterior<T>& post, const Tensor<T>& noise) {
  ag::Tape<T> tape;
  return ag::reparameterize(tape.constant(post.mu), tape.constant(post.logvar), noise).value();
}

template <typename T>
Tensor<T> condition_upsample(const Tensor<T>& z, int f) {
  ag::Tape<T> tape;
  return ag::upsample_nearest(tape.constant(z), f).value();
}

template <typename T>
Tensor<T> unet_velocity(const Tensor<T>& x_t, std::span<const T> t, const Tensor<T>& cond, const UNetConfig& cfg,
                        const ModelParams<T>& params) {
  ag::Tape<T> tape;
  BoundParams<T> p(tape, params, false);
  return unet_forward(tape.constant(x_t), t, tape.constant(cond), cfg, p).value();
}

template <typename T>
Tensor<T> gaussian_decode(const Tensor<T>& z, const EncoderConfig& cfg, const ModelParams<T>& params) {
  ag::Tape<T> tape;
  BoundParams<T> p(tape, params, false);
  return gaussian_decoder_forward(tape.constant(z), cfg, p).value();
}

template <typename T>
Tensor<T> discriminate(const Tensor<T>& x, const DiscriminatorConfig& cfg, const ModelParams<T>& params) {
  ag::Tape<T> tape;
  BoundParams<T> p(tape, params, false);
  return discriminator_forward(tape.constant(x), cfg, p).value();
}

template <typename T>
Tensor<T> feature_embedding(const Tensor<T>& x, const FeatureNetConfig& cfg, const ModelParams<T>& params) {
  ag::Tape<T> tape;
  BoundParams<T> p(tape, params, false);
  auto out = feature_net_forward(tape.constant(x), cfg, p);
  return ag::mean_spatial(out.features.back()).value();
}

#define DGAE_INSTANTIATE(T)                                                                               \
  template EncoderOutput<T> encoder_forward(Var<T>, const EncoderConfig&, const BoundParams<T>&);         \
  template Var<T> condition_upsample(Var<T>, int);                                                        \
  template Tensor<T> timestep_embedding(std::span<const T>, int);                                         \
  template Var<T> unet_forward(Var<T>, std::span<const T>, Var<T>, const UNetConfig&, const BoundParams<T>&); \
  template Var<T> gaussian_decoder_forward(Var<T>, const EncoderConfig&, const BoundParams<T>&);          \
  template Var<T> discriminator_forward(Var<T>, const DiscriminatorConfig&, const BoundParams<T>&);       \
  template FeatureOutput<T> feature_net_forward(Var<T>, const FeatureNetConfig&, const BoundParams<T>&);  \
  template Var<T> latent_gen_forward(Var<T>, std::span<const T>, const LatentGenConfig&, const BoundParams<T>&); \
  template LatentPosterior<T> encode(const Tensor<T>&, const EncoderConfig&, const ModelParams<T>&);      \
  template Tensor<T> reparameterize(const LatentPosterior<T>&, const Tensor<T>&);                         \
  template Tensor<T> condition_upsample(const Tensor<T>&, int);                                           \
  template Tensor<T> unet_velocity(const Tensor<T>&, std::span<const T>, const Tensor<T>&, const UNetConfig&, \
                                   const ModelParams<T>&);                                                \
  template Tensor<T> gaussian_decode(const Tensor<T>&, const EncoderConfig&, const ModelParams<T>&);      \
  template Tensor<T> discriminate(const Tensor<T>&, const DiscriminatorConfig&, const ModelParams<T>&);   \
  template Tensor<T> feature_embedding(const Tensor<T>&, const FeatureNetConfig&, const ModelParams<T>&);

DGAE_INSTANTIATE(float)
DGAE_INSTANTIATE(double)
#undef DGAE_INSTANTIATE

}  // namespace dgae
