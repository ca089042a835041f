// SPDX-License-Identifier: Apache-2.0
#include "dgae/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "dgae/checkpoint.hpp"

namespace dgae {
namespace {

// Value codecs ------------------------------------------------------------------

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::int64_t to_int(const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("expected a finite number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(trim(item))));
  if (out.empty()) throw ConfigError("expected a comma-separated integer list, got '" + v + "'");
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

ModelKind to_kind(const std::string& v) {
  if (v == "dgae") return ModelKind::kDgae;
  if (v == "baseline-vae") return ModelKind::kBaselineVae;
  throw ConfigError("expected dgae or baseline-vae, got '" + v + "'");
}

// Key registry ------------------------------------------------------------------

struct Key {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define INT_KEY(field) \
  Key { [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(v)); } }
#define U64_KEY(field) \
  Key { [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_u64(v); } }
#define DBL_KEY(field) \
  Key { [](const RunConfig& c) { return fmt_double(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_double(v); } }
#define LIST_KEY(field) \
  Key { [](const RunConfig& c) { return fmt_list(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_int_list(v); } }

const std::map<std::string, Key>& registry() {
  static const std::map<std::string, Key> keys = {
      {"run.kind", Key{[](const RunConfig& c) { return to_string(c.kind); },
                       [](RunConfig& c, const std::string& v) { c.kind = to_kind(v); }}},
      {"run.out_dir", Key{[](const RunConfig& c) { return c.out_dir; },
                          [](RunConfig& c, const std::string& v) { c.out_dir = v; }}},
      {"run.total_steps", INT_KEY(total_steps)},
      {"run.batch_size", INT_KEY(batch_size)},
      {"run.log_every", INT_KEY(log_every)},
      {"run.ckpt_every", INT_KEY(ckpt_every)},
      {"seed.global", U64_KEY(seed)},
      {"seed.data", U64_KEY(dataset.seed)},
      {"seed.eval", U64_KEY(eval_seed)},
      {"dataset.num_images", INT_KEY(dataset.num_images)},
      {"dataset.image_size", INT_KEY(dataset.image_size)},
      {"dataset.shape_classes", INT_KEY(dataset.num_shape_classes)},
      {"dataset.color_classes", INT_KEY(dataset.num_color_classes)},
      {"dataset.texture_octaves", INT_KEY(dataset.texture_octaves)},
      {"dataset.crop_size", INT_KEY(crop_size)},
      {"encoder.f", INT_KEY(encoder.downsample_factor)},
      {"encoder.c", INT_KEY(encoder.latent_channels)},
      {"encoder.base", INT_KEY(encoder.base_channels)},
      {"encoder.mults", LIST_KEY(encoder.channel_multipliers)},
      {"encoder.res_blocks", INT_KEY(encoder.res_blocks_per_level)},
      {"decoder.preset", Key{[](const RunConfig& c) { return c.decoder_preset; },
                             [](RunConfig& c, const std::string& v) { c.decoder_preset = v; }}},
      {"decoder.base", INT_KEY(unet.base_channels)},
      {"decoder.temb", INT_KEY(unet.time_emb_dim)},
      {"decoder.mults", LIST_KEY(unet.channel_multipliers)},
      {"decoder.res_blocks", INT_KEY(unet.res_blocks_per_level)},
      {"disc.scale", Key{[](const RunConfig& c) { return to_string(c.disc_scale); },
                         [](RunConfig& c, const std::string& v) { c.disc_scale = parse_disc_scale(v); }}},
      {"disc.start_step", INT_KEY(disc_start)},
      {"loss.alpha", DBL_KEY(loss.alpha)},
      {"loss.beta", DBL_KEY(loss.beta)},
      {"loss.eta", DBL_KEY(loss.eta)},
      {"loss.lambda", DBL_KEY(loss.lambda)},
      {"loss.t_min", DBL_KEY(t_min)},
      {"optim.lr_peak", DBL_KEY(optim.lr_peak)},
      {"optim.lr_final", DBL_KEY(optim.lr_final)},
      {"optim.warmup", INT_KEY(optim.warmup)},
      {"optim.beta1", DBL_KEY(optim.beta1)},
      {"optim.beta2", DBL_KEY(optim.beta2)},
      {"optim.eps", DBL_KEY(optim.eps)},
      {"optim.weight_decay", DBL_KEY(optim.weight_decay)},
      {"optim.clip_norm", DBL_KEY(optim.clip_norm)},
      {"sampler.steps", INT_KEY(sampler.num_steps)},
      {"sampler.stochastic", Key{[](const RunConfig& c) { return std::string(c.sampler.stochastic ? "true" : "false"); },
                                 [](RunConfig& c, const std::string& v) { c.sampler.stochastic = to_bool(v); }}},
      {"sampler.churn", DBL_KEY(sampler.churn)},
      {"features.steps", INT_KEY(features.steps)},
      {"features.batch_size", INT_KEY(features.batch_size)},
      {"features.lr", DBL_KEY(features.lr)},
      {"features.warmup", INT_KEY(features.warmup)},
      {"eval.num_images", INT_KEY(eval.num_images)},
      {"eval.pool", INT_KEY(eval.pool)},
      {"eval.batch_size", INT_KEY(eval.batch_size)},
      {"latent_gen.steps", INT_KEY(latent_gen.steps)},
      {"latent_gen.batch_size", INT_KEY(latent_gen.batch_size)},
      {"latent_gen.lr_peak", DBL_KEY(latent_gen.lr_peak)},
      {"latent_gen.warmup", INT_KEY(latent_gen.warmup)},
      {"latent_gen.eval_every", INT_KEY(latent_gen.eval_every)},
      {"latent_gen.num_samples", INT_KEY(latent_gen.num_samples)},
      {"latent_gen.decode_subset", INT_KEY(latent_gen.decode_subset)},
      {"latent_gen.sample_steps", INT_KEY(latent_gen.sample_steps)},
      {"latent_gen.hidden", INT_KEY(latent_gen.net.hidden)},
      {"latent_gen.blocks", INT_KEY(latent_gen.net.blocks)},
      {"latent_gen.temb", INT_KEY(latent_gen.net.time_emb_dim)},
  };
  return keys;
}

#undef INT_KEY
#undef U64_KEY
#undef DBL_KEY
#undef LIST_KEY

struct Entry {
  std::string key, value, where;
};

void apply_latent_preset(RunConfig& c, const std::string& v) {
  int f = 0, ch = 0;
  char tail = 0;
  if (std::sscanf(v.c_str(), "f%dc%d%c", &f, &ch, &tail) != 2)
    throw ConfigError("expected a preset of the form f<factor>c<channels>, got '" + v + "'");
  c.encoder.downsample_factor = f;
  c.encoder.latent_channels = ch;
}

void apply_decoder_preset(RunConfig& c, const std::string& v) {
  if (v == "B") {
    c.unet.base_channels = 16;
    c.unet.time_emb_dim = 64;
  } else if (v == "M") {
    c.unet.base_channels = 32;
    c.unet.time_emb_dim = 128;
  } else if (v == "L") {
    c.unet.base_channels = 48;
    c.unet.time_emb_dim = 192;
  } else {
    throw ConfigError("expected B, M or L, got '" + v + "'");
  }
  c.decoder_preset = v;
}

/// Field names used in component validation messages, mapped to config keys.
const std::map<std::string, std::string>& field_aliases() {
  static const std::map<std::string, std::string> m{
      {"encoder.channel_multipliers", "encoder.mults"},  {"encoder.latent_channels", "encoder.c"},
      {"encoder.base_channels", "encoder.base"},         {"encoder.res_blocks_per_level", "encoder.res_blocks"},
      {"decoder.base_channels", "decoder.base"},         {"decoder.time_emb_dim", "decoder.temb"},
      {"decoder.channel_multipliers", "decoder.mults"},  {"decoder.res_blocks_per_level", "decoder.res_blocks"},
      {"decoder.cond_channels", "encoder.c"},            {"dataset.num_shape_classes", "dataset.shape_classes"},
      {"dataset.num_color_classes", "dataset.color_classes"}};
  return m;
}

bool mentions(const std::string& msg, const std::string& name) {
  for (std::size_t at = msg.find(name); at != std::string::npos; at = msg.find(name, at + 1)) {
    const std::size_t end = at + name.size();
    const bool left_ok = at == 0 || !(std::isalnum(static_cast<unsigned char>(msg[at - 1])) || msg[at - 1] == '.' || msg[at - 1] == '_');
    const bool right_ok =
        end == msg.size() || !(std::isalnum(static_cast<unsigned char>(msg[end])) || msg[end] == '.' || msg[end] == '_');
    if (left_ok && right_ok) return true;
  }
  return false;
}

/// Prefixes a validation error with the location of the entry that set the offending key.
ConfigError locate(const ConfigError& err, const std::vector<Entry>& entries) {
  const std::string msg = err.what();
  std::vector<std::string> keys;
  for (const auto& [key, k] : registry())
    if (mentions(msg, key)) keys.push_back(key);
  for (const auto& [field, key] : field_aliases())
    if (mentions(msg, field)) keys.push_back(key);
  for (auto it = entries.rbegin(); it != entries.rend(); ++it)
    for (const std::string& key : keys) {
      const bool preset_hit = (it->key == "latent" && (key == "encoder.f" || key == "encoder.c")) ||
                              (it->key == "decoder.preset" && (key == "decoder.base" || key == "decoder.temb"));
      if (it->key == key || preset_hit) {
        const std::string body = msg.rfind("key '", 0) == 0 ? msg : "key '" + key + "': " + msg;
        return ConfigError(it->where + ": " + body);
      }
    }
  return err;
}

RunConfig build(const std::vector<Entry>& entries) {
  RunConfig c;
  std::set<std::string> seen;
  auto fail = [](const Entry& e, const std::string& msg) {
    return ConfigError(e.where + ": key '" + e.key + "': " + msg);
  };
  // Presets first so explicit keys can refine them.
  for (const Entry& e : entries) {
    try {
      if (e.key == "latent") apply_latent_preset(c, e.value);
      if (e.key == "decoder.preset") apply_decoder_preset(c, e.value);
    } catch (const ConfigError& err) {
      throw fail(e, err.what());
    }
  }
  for (const Entry& e : entries) {
    if (e.key == "latent" || e.key == "decoder.preset") {
      seen.insert(e.key);
      continue;
    }
    auto it = registry().find(e.key);
    if (it == registry().end()) throw fail(e, "unknown key");
    try {
      it->second.set(c, e.value);
    } catch (const ConfigError& err) {
      throw fail(e, err.what());
    } catch (const std::exception& err) {
      throw fail(e, err.what());
    }
    seen.insert(e.key);
  }
  if (!seen.count("encoder.mults")) c.encoder.channel_multipliers = default_encoder_mults(c.encoder.downsample_factor);
  if (!seen.count("loss.lambda")) c.loss.lambda = c.kind == ModelKind::kDgae ? 0.0 : 0.5;
  c.unet.cond_channels = c.encoder.latent_channels;
  c.feature_net = feature_config(c);
  if (c.encoder.downsample_factor > 0) {
    const int side = c.effective_crop() / c.encoder.downsample_factor;
    c.latent_gen.net.latent_dim = side * side * c.encoder.latent_channels;
  }
  try {
    c.validate();
  } catch (const ConfigError& err) {
    throw locate(err, entries);
  }
  return c;
}

void parse_lines(const std::string& text, const std::string& origin, std::vector<Entry>& out) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where};
    if (e.key.empty()) throw ConfigError(where + ": empty key");
    if (e.key != "latent" && e.key != "decoder.preset" && !registry().count(e.key))
      throw ConfigError(where + ": key '" + e.key + "': unknown key");
    out.push_back(std::move(e));
  }
}

void add_overrides(const std::vector<std::string>& overrides, std::vector<Entry>& out) {
  for (std::size_t i = 0; i < overrides.size(); ++i)
    parse_lines(overrides[i], "--set[" + std::to_string(i) + "]", out);
}

}  // namespace

std::string to_string(ModelKind k) { return k == ModelKind::kDgae ? "dgae" : "baseline-vae"; }

std::vector<int> default_encoder_mults(int f) {
  switch (f) {
    case 8: return {1, 2, 2, 4};
    case 16: return {1, 1, 2, 2, 4};
    case 32: return {1, 1, 2, 2, 4, 4};
    default: return {1};  // rejected by EncoderConfig::validate
  }
}

FeatureNetConfig feature_config(const RunConfig& cfg) {
  FeatureNetConfig f;
  f.num_shape_classes = cfg.dataset.num_shape_classes;
  f.num_color_classes = cfg.dataset.num_color_classes;
  return f;
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) throw ConfigError("key '" + key + "': " + msg);
  };
  dataset.validate();
  encoder.validate();
  unet.validate();
  loss.validate();
  optim.validate();
  sampler.validate();
  need(!out_dir.empty(), "run.out_dir", "must not be empty");
  need(crop_size >= 0 && crop_size <= dataset.image_size, "dataset.crop_size", "must lie in [0, image_size]");
  need(effective_crop() % 32 == 0, "dataset.crop_size", "must be a multiple of 32");
  need(effective_crop() % encoder.downsample_factor == 0 && effective_crop() / encoder.downsample_factor >= 1,
       "encoder.f", "must divide the crop size");
  need(kind != ModelKind::kDgae || loss.lambda == 0.0, "loss.lambda", "must be 0 for run.kind = dgae");
  need(t_min > 0 && t_min < 1, "loss.t_min", "must lie in (0, 1)");
  need(total_steps >= 1, "run.total_steps", "must be >= 1");
  need(optim.warmup < total_steps, "optim.warmup", "must be smaller than run.total_steps");
  need(batch_size >= 1, "run.batch_size", "must be >= 1");
  need(log_every >= 1, "run.log_every", "must be >= 1");
  need(ckpt_every >= 1, "run.ckpt_every", "must be >= 1");
  need(disc_start >= 0, "disc.start_step", "must be >= 0");
  need(features.steps >= 1 && features.batch_size >= 1, "features.steps", "steps and batch_size must be >= 1");
  need(features.warmup < features.steps, "features.warmup", "must be smaller than features.steps");
  need(features.lr > 0, "features.lr", "must be positive");
  need(eval.num_images >= 2, "eval.num_images", "must be >= 2");
  need(eval.pool >= eval.num_images, "eval.pool", "must be >= eval.num_images");
  need(eval.batch_size >= 1, "eval.batch_size", "must be >= 1");
  need(latent_gen.steps >= 1 && latent_gen.batch_size >= 1, "latent_gen.steps", "steps and batch_size must be >= 1");
  need(latent_gen.warmup < latent_gen.steps, "latent_gen.warmup", "must be smaller than latent_gen.steps");
  need(latent_gen.lr_peak > 0, "latent_gen.lr_peak", "must be positive");
  need(latent_gen.eval_every >= 1, "latent_gen.eval_every", "must be >= 1");
  need(latent_gen.num_samples >= 2, "latent_gen.num_samples", "must be >= 2");
  need(latent_gen.decode_subset >= 2 && latent_gen.decode_subset <= latent_gen.num_samples, "latent_gen.decode_subset",
       "must lie in [2, latent_gen.num_samples]");
  need(latent_gen.sample_steps >= 1, "latent_gen.sample_steps", "must be >= 1");
  need(latent_gen.net.hidden >= 1 && latent_gen.net.blocks >= 1, "latent_gen.hidden", "hidden and blocks must be >= 1");
  need(latent_gen.net.time_emb_dim >= 2 && latent_gen.net.time_emb_dim % 2 == 0, "latent_gen.temb",
       "must be an even number >= 2");
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [key, k] : registry()) out += key + "=" + k.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()).substr(0, 16); }

RunConfig parse_config_text(const std::string& text, const std::string& origin,
                            const std::vector<std::string>& overrides) {
  std::vector<Entry> entries;
  parse_lines(text, origin, entries);
  add_overrides(overrides, entries);
  return build(entries);
}

RunConfig parse_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  return parse_config_text(read_file(path), path.string(), overrides);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out{"latent"};
  for (const auto& e : registry()) out.push_back(e.first);
  return out;
}

}  // namespace dgae
