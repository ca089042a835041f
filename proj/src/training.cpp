// SPDX-License-Identifier: Apache-2.0
#include "dgae/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dgae/csv.hpp"
#include "dgae/diffusion.hpp"
#include "dgae/metrics.hpp"
#include "dgae/nets.hpp"

namespace dgae {
namespace {

TensorF normal_tensor(const Shape& shape, std::uint64_t seed, const char* stream, std::int64_t step) {
  TensorF t(shape);
  Rng rng(seed, stream, static_cast<std::uint64_t>(step));
  rng.fill_normal<float>(t.values());
  return t;
}

std::vector<float> draw_t(std::int64_t n, double t_min, std::uint64_t seed, const char* stream, std::int64_t step) {
  Rng rng(seed, stream, static_cast<std::uint64_t>(step));
  std::vector<float> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = static_cast<float>(rng.uniform(t_min, 1.0));
  return t;
}

std::uint64_t init_seed(std::uint64_t seed, const std::string& net) { return stream_key(seed, "init/" + net); }

Architecture architecture_for(const RunConfig& cfg, const std::string& net) {
  if (net == kEncoder) return encoder_architecture(cfg.encoder);
  if (net == kUNet) return unet_architecture(cfg.unet);
  if (net == kDecoder) return gaussian_decoder_architecture(cfg.encoder);
  if (net == kDisc) return discriminator_architecture(DiscriminatorConfig::from_scale(cfg.disc_scale));
  throw ConfigError("unknown network '" + net + "'");
}

std::vector<std::string> networks_for(const RunConfig& cfg) {
  if (cfg.kind == ModelKind::kDgae) return {kEncoder, kUNet};
  return {kEncoder, kDecoder, kDisc};
}

double scalar(const ag::Var<float>& v) { return static_cast<double>(v.value()[0]); }

void check_finite(const std::map<std::string, double>& terms, std::int64_t step) {
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v))
      throw NumericError("non-finite loss term '" + name + "' at step " + std::to_string(step));
}

void apply_update(const RunConfig& cfg, TrainState& st, const std::vector<std::string>& nets,
                  std::vector<ModelParams<float>>& grads, double lr) {
  std::vector<ModelParams<float>*> ptrs;
  for (auto& g : grads) ptrs.push_back(&g);
  clip_gradients(ptrs, cfg.optim.clip_norm);
  for (std::size_t i = 0; i < nets.size(); ++i)
    adamw_update(st.nets.at(nets[i]), grads[i], st.opt.at(nets[i]), lr, cfg.optim);
}

StepLog dgae_update(const RunConfig& cfg, const TensorF& x, const ModelParams<float>& features, TrainState& st,
                    double lr) {
  const std::int64_t s = st.step;
  ag::Tape<float> tape;
  BoundParams<float> enc(tape, st.nets.at(kEncoder), true);
  BoundParams<float> unet(tape, st.nets.at(kUNet), true);
  auto xv = tape.constant(x);
  auto e = encoder_forward(xv, cfg.encoder, enc);
  auto z = ag::reparameterize(e.mu, e.logvar, normal_tensor(e.mu.shape(), cfg.seed, "z", s));
  const std::vector<float> t = draw_t(x.dim(0), cfg.t_min, cfg.seed, "t", s);
  const TensorF eps = normal_tensor(x.shape(), cfg.seed, "eps", s);
  auto xt = tape.constant(forward_noise<float>(x, eps, t));
  auto v = unet_forward(xt, std::span<const float>(t), condition_upsample(z, cfg.encoder.downsample_factor), cfg.unet, unet);

  auto dsm = losses::dsm_velocity_loss(v, xv, tape.constant(eps), std::span<const float>(t));
  auto kl = losses::kl_divergence(e.mu, e.logvar);
  auto total = ag::add(ag::scale(dsm, static_cast<float>(cfg.loss.alpha)), ag::scale(kl, static_cast<float>(cfg.loss.beta)));
  DgaeTerms terms{scalar(dsm), scalar(kl), 0.0};
  StepLog log;
  log.terms = {{"dsm", terms.dsm}, {"kl", terms.kl}};
  if (cfg.loss.eta > 0) {
    BoundParams<float> feat(tape, features, false);
    auto lp = losses::perceptual_loss(predict_x0(xt, std::span<const float>(t), v), xv, cfg.feature_net, feat);
    terms.lpips = scalar(lp);
    log.terms["lpips"] = terms.lpips;
    total = ag::add(total, ag::scale(lp, static_cast<float>(cfg.loss.eta)));
  }
  const LossReport rep = dgae_total_loss(terms, cfg.loss);
  log.total = rep.total;
  check_finite(log.terms, s + 1);

  tape.backward(total);
  std::vector<ModelParams<float>> grads{enc.gradients(), unet.gradients()};
  apply_update(cfg, st, {kEncoder, kUNet}, grads, lr);
  return log;
}

StepLog discriminator_update(const RunConfig& cfg, const TensorF& x, TrainState& st, double lr) {
  const std::int64_t s = st.step;
  const DiscriminatorConfig dcfg = DiscriminatorConfig::from_scale(cfg.disc_scale);
  ag::Tape<float> tape;
  BoundParams<float> enc(tape, st.nets.at(kEncoder), false);
  BoundParams<float> dec(tape, st.nets.at(kDecoder), false);
  BoundParams<float> disc(tape, st.nets.at(kDisc), true);
  auto xv = tape.constant(x);
  auto e = encoder_forward(xv, cfg.encoder, enc);
  auto z = ag::reparameterize(e.mu, e.logvar, normal_tensor(e.mu.shape(), cfg.seed, "z", s));
  auto fake = tape.constant(gaussian_decoder_forward(z, cfg.encoder, dec).value());
  auto d = losses::hinge_d_loss(discriminator_forward(xv, dcfg, disc), discriminator_forward(fake, dcfg, disc));
  StepLog log;
  log.terms = {{"gan_d", scalar(d)}};
  log.total = log.terms["gan_d"];
  check_finite(log.terms, s + 1);

  tape.backward(d);
  std::vector<ModelParams<float>> grads{disc.gradients()};
  apply_update(cfg, st, {kDisc}, grads, lr);

  if (log.total < kCollapseThreshold) {
    if (++st.collapse_run >= kCollapseSteps) st.collapse_flagged = true;
  } else {
    st.collapse_run = 0;
  }
  return log;
}

StepLog autoencoder_update(const RunConfig& cfg, const TensorF& x, const ModelParams<float>& features, TrainState& st,
                           double lr) {
  const std::int64_t s = st.step;
  const bool gan = cfg.loss.lambda > 0 && s >= cfg.disc_start;
  ag::Tape<float> tape;
  BoundParams<float> enc(tape, st.nets.at(kEncoder), true);
  BoundParams<float> dec(tape, st.nets.at(kDecoder), true);
  auto xv = tape.constant(x);
  auto e = encoder_forward(xv, cfg.encoder, enc);
  auto z = ag::reparameterize(e.mu, e.logvar, normal_tensor(e.mu.shape(), cfg.seed, "z", s));
  auto x_hat = gaussian_decoder_forward(z, cfg.encoder, dec);

  auto rec = losses::l2_reconstruction(xv, x_hat);
  auto kl = losses::kl_divergence(e.mu, e.logvar);
  auto total = ag::add(ag::scale(rec, static_cast<float>(cfg.loss.alpha)), ag::scale(kl, static_cast<float>(cfg.loss.beta)));
  VaeTerms terms{scalar(rec), scalar(kl), 0.0, 0.0};
  StepLog log;
  log.terms = {{"rec", terms.rec}, {"kl", terms.kl}};
  if (cfg.loss.eta > 0) {
    BoundParams<float> feat(tape, features, false);
    auto lp = losses::perceptual_loss(x_hat, xv, cfg.feature_net, feat);
    terms.lpips = scalar(lp);
    log.terms["lpips"] = terms.lpips;
    total = ag::add(total, ag::scale(lp, static_cast<float>(cfg.loss.eta)));
  }
  if (gan) {
    BoundParams<float> disc(tape, st.nets.at(kDisc), false);
    auto g = losses::hinge_g_loss(discriminator_forward(x_hat, DiscriminatorConfig::from_scale(cfg.disc_scale), disc));
    terms.gan = scalar(g);
    log.terms["gan_g"] = terms.gan;
    total = ag::add(total, ag::scale(g, static_cast<float>(cfg.loss.lambda)));
  }
  LossWeights w = cfg.loss;
  if (!gan) w.lambda = 0;
  log.total = vae_total_loss(terms, w).total;
  check_finite(log.terms, s + 1);

  tape.backward(total);
  std::vector<ModelParams<float>> grads{enc.gradients(), dec.gradients()};
  apply_update(cfg, st, {kEncoder, kDecoder}, grads, lr);
  return log;
}

std::string log_row(const StepLog& log) {
  auto cell = [&](const char* name) {
    auto it = log.terms.find(name);
    return it == log.terms.end() ? std::string() : csv_number(it->second);
  };
  return std::to_string(log.step) + "," + csv_number(log.lr) + "," + csv_number(log.total) + "," + cell("dsm") + "," +
         cell("kl") + "," + cell("lpips") + "," + cell("gan_g") + "," + cell("gan_d") + "," + cell("rec");
}

std::string feature_cache_key(const RunConfig& cfg) {
  std::string key;
  const std::string canon = cfg.canonical();
  std::size_t pos = 0;
  while (pos < canon.size()) {
    const std::size_t end = canon.find('\n', pos);
    const std::string line = canon.substr(pos, end - pos);
    if (line.rfind("dataset.", 0) == 0 || line.rfind("features.", 0) == 0 || line.rfind("seed.", 0) == 0)
      key += line + "\n";
    pos = end + 1;
  }
  return sha256_hex(key).substr(0, 16);
}

}  // namespace

TrainState init_train_state(const RunConfig& cfg) {
  TrainState st;
  for (const std::string& net : networks_for(cfg)) {
    st.nets.emplace(net, init_params<float>(architecture_for(cfg, net), init_seed(cfg.seed, net)));
    st.opt.emplace(net, OptimizerState<float>::fresh(st.nets.at(net)));
  }
  return st;
}

std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step, std::int64_t batch_size,
                                        std::int64_t dataset_size) {
  if (dataset_size < 1 || batch_size < 1) throw ConfigError("batch_indices: empty dataset or batch");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> perm;
  for (std::int64_t k = 0; k < batch_size; ++k) {
    const std::int64_t pos = step * batch_size + k;
    const std::int64_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      perm.resize(static_cast<std::size_t>(dataset_size));
      std::iota(perm.begin(), perm.end(), std::int64_t{0});
      Rng rng(seed, "batch", static_cast<std::uint64_t>(epoch));
      for (std::int64_t i = dataset_size - 1; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(pos % dataset_size)]);
  }
  return out;
}

bool is_discriminator_step(const RunConfig& cfg, std::int64_t step) {
  return cfg.kind == ModelKind::kBaselineVae && cfg.loss.lambda > 0 && step >= cfg.disc_start &&
         (step - cfg.disc_start) % 2 == 1;
}

StepLog train_step(const RunConfig& cfg, const Dataset& data, const ModelParams<float>& features, TrainState& state) {
  if (state.step >= cfg.total_steps)
    throw ConfigError("run already completed " + std::to_string(cfg.total_steps) + " steps");
  if (cfg.loss.eta > 0) require_trained_features(features);
  const std::int64_t s = state.step;
  const double lr = lr_schedule(s + 1, cfg.total_steps, cfg.optim.warmup, cfg.optim.lr_peak, cfg.optim.lr_final);
  Rng aug(cfg.seed, "aug", static_cast<std::uint64_t>(s));
  const TensorF x = augment_train(data.gather(batch_indices(cfg.seed, s, cfg.batch_size, data.size())),
                                  cfg.effective_crop(), aug);
  StepLog log;
  if (cfg.kind == ModelKind::kDgae)
    log = dgae_update(cfg, x, features, state, lr);
  else if (is_discriminator_step(cfg, s))
    log = discriminator_update(cfg, x, state, lr);
  else
    log = autoencoder_update(cfg, x, features, state, lr);
  log.step = ++state.step;
  log.lr = lr;
  return log;
}

ModelParams<float> train_feature_extractor(const FeatureNetConfig& net, const FeatureTrainConfig& tc,
                                           const Dataset& data, std::uint64_t seed,
                                           const std::function<void(std::int64_t, double)>& on_log) {
  ModelParams<float> params = init_params<float>(feature_net_architecture(net), init_seed(seed, kFeatures));
  OptimizerState<float> state = OptimizerState<float>::fresh(params);
  OptimizerConfig oc;
  oc.lr_peak = tc.lr;
  oc.lr_final = tc.lr * 0.1;
  oc.warmup = tc.warmup;
  const std::uint64_t batch_seed = stream_key(seed, "features");
  for (std::int64_t s = 0; s < tc.steps; ++s) {
    const auto idx = batch_indices(batch_seed, s, tc.batch_size, data.size());
    Rng aug(seed, "features.aug", static_cast<std::uint64_t>(s));
    const TensorF x = augment_train(data.gather(idx), static_cast<int>(data.images.dim(2)), aug);
    std::vector<int> shape_labels, color_labels;
    for (std::int64_t i : idx) {
      shape_labels.push_back(data.shape_labels[static_cast<std::size_t>(i)]);
      color_labels.push_back(data.color_labels[static_cast<std::size_t>(i)]);
    }
    ag::Tape<float> tape;
    BoundParams<float> bp(tape, params, true);
    auto out = feature_net_forward(tape.constant(x), net, bp);
    auto loss = ag::add(ag::softmax_cross_entropy(out.shape_logits, std::span<const int>(shape_labels)),
                        ag::softmax_cross_entropy(out.color_logits, std::span<const int>(color_labels)));
    const double value = scalar(loss);
    if (!std::isfinite(value)) throw NumericError("feature extractor loss became non-finite at step " + std::to_string(s + 1));
    tape.backward(loss);
    ModelParams<float> g = bp.gradients();
    clip_gradients<float>({&g}, oc.clip_norm);
    adamw_update(params, g, state, lr_schedule(s + 1, tc.steps, oc.warmup, oc.lr_peak, oc.lr_final), oc);
    if (on_log && ((s + 1) % 100 == 0 || s + 1 == tc.steps)) on_log(s + 1, value);
  }
  mark_trained(params, tc.steps);
  return params;
}

// Checkpoints -----------------------------------------------------------------

Checkpoint make_checkpoint(const RunConfig& cfg, const TrainState& state, const ModelParams<float>& features) {
  Checkpoint c;
  c.metadata["format"] = "dgae-checkpoint";
  c.metadata["model"] = to_string(cfg.kind);
  c.metadata["config"] = cfg.canonical();
  c.metadata["config_hash"] = cfg.hash();
  c.metadata["step"] = state.step;
  c.metadata["seed"] = cfg.seed;
  c.metadata["rng"] = "xoshiro256** substreams keyed by (seed, name, step); no carried state";
  c.metadata["collapse_run"] = state.collapse_run;
  c.metadata["collapse_flagged"] = state.collapse_flagged;
  for (const auto& [net, params] : state.nets) c.put(net, params);
  for (const auto& [net, opt] : state.opt) {
    c.put("opt.m/" + net, opt.m);
    c.put("opt.v/" + net, opt.v);
    c.metadata["opt_step"][net] = opt.step;
  }
  c.put(kFeatures, features);
  return c;
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("config")) throw CorruptionError("checkpoint lacks a config snapshot");
  return parse_config_text(ckpt.metadata["config"].get<std::string>(), "checkpoint config");
}

TrainState restore_train_state(const Checkpoint& ckpt, const RunConfig& cfg) {
  const std::string stored = ckpt.metadata.value("config_hash", std::string());
  if (stored != cfg.hash())
    throw ConfigError("checkpoint config hash " + stored + " does not match the run config hash " + cfg.hash());
  TrainState st;
  st.step = ckpt.metadata.at("step").get<std::int64_t>();
  st.collapse_run = ckpt.metadata.value("collapse_run", std::int64_t{0});
  st.collapse_flagged = ckpt.metadata.value("collapse_flagged", false);
  for (const std::string& net : networks_for(cfg)) {
    st.nets.emplace(net, ckpt.get(net));
    OptimizerState<float> o;
    o.step = ckpt.metadata.at("opt_step").at(net).get<std::int64_t>();
    o.m = ckpt.get("opt.m/" + net);
    o.v = ckpt.get("opt.v/" + net);
    st.opt.emplace(net, std::move(o));
  }
  return st;
}

Autoencoder load_autoencoder(const Checkpoint& ckpt) {
  Autoencoder ae;
  ae.cfg = checkpoint_config(ckpt);
  ae.encoder = ckpt.get(kEncoder);
  ae.decoder = ckpt.get(ae.cfg.kind == ModelKind::kDgae ? kUNet : kDecoder);
  ae.features = ckpt.get(kFeatures);
  ae.checkpoint_hash = ckpt.content_hash();
  ae.step = ckpt.metadata.value("step", std::int64_t{0});
  const auto expect = [&](const ModelParams<float>& p, const Architecture& arch, const char* what) {
    if (p.scalar_count() != arch.param_count())
      throw ConfigError(std::string("checkpoint ") + what + " does not match its config (parameter count)");
  };
  expect(ae.encoder, encoder_architecture(ae.cfg.encoder), "encoder");
  expect(ae.decoder,
         ae.cfg.kind == ModelKind::kDgae ? unet_architecture(ae.cfg.unet) : gaussian_decoder_architecture(ae.cfg.encoder),
         "decoder");
  return ae;
}

// Driver ----------------------------------------------------------------------

ModelParams<float> obtain_feature_extractor(const RunConfig& cfg, const Dataset& data,
                                            const std::filesystem::path& cache_dir) {
  const std::filesystem::path path = cache_dir / ("features-" + feature_cache_key(cfg) + ".bin");
  if (std::filesystem::exists(path)) return load_checkpoint(path).get(kFeatures);
  ModelParams<float> f = train_feature_extractor(cfg.feature_net, cfg.features, data, cfg.seed);
  Checkpoint c;
  c.metadata["format"] = "dgae-features";
  c.metadata["config"] = cfg.canonical();
  c.put(kFeatures, f);
  save_checkpoint(c, path);
  return f;
}

TrainResult train_run(const RunConfig& cfg, const std::filesystem::path& dir, const TrainOptions& opt) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.txt", "# config_hash: " + cfg.hash() + "\n" + cfg.canonical());
  const Dataset data = generate_procedural_dataset(cfg.dataset);
  const std::filesystem::path cache = (dir.has_parent_path() ? dir.parent_path() : std::filesystem::path(".")) / "_features";
  const ModelParams<float> features = obtain_feature_extractor(cfg, data, cache);

  const std::filesystem::path ckpt_path = dir / "ckpt.bin";
  const std::filesystem::path csv_path = dir / "train.csv";
  TrainState st;
  if (opt.resume && std::filesystem::exists(ckpt_path)) {
    st = restore_train_state(load_checkpoint(ckpt_path), cfg);
    if (std::filesystem::exists(csv_path))
      csv_filter(csv_path, kTrainCsvSchema, [&](const std::vector<std::string>& r) {
        return !r.empty() && std::stoll(r[0]) <= st.step;
      });
  } else {
    st = init_train_state(cfg);
    std::filesystem::remove(csv_path);
  }
  csv_ensure(csv_path, kTrainCsvSchema, kTrainCsvHeader);

  const std::int64_t stop = opt.stop_at < 0 ? cfg.total_steps : std::min(opt.stop_at, cfg.total_steps);
  TrainResult res;
  std::string last_good = std::filesystem::exists(ckpt_path) ? ckpt_path.string() : "none";
  while (st.step < stop) {
    const bool was_flagged = st.collapse_flagged;
    StepLog log;
    try {
      log = train_step(cfg, data, features, st);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + "; last good checkpoint: " + last_good);
    }
    if (st.collapse_flagged && !was_flagged && opt.on_warning)
      opt.on_warning("discriminator collapse: d_loss < 1e-4 for " + std::to_string(kCollapseSteps) +
                     " consecutive discriminator updates (step " + std::to_string(log.step) + ")");
    if (log.step % cfg.log_every == 0 || log.step == stop) {
      csv_append(csv_path, log_row(log));
      res.logged.push_back(log);
      if (opt.on_log) opt.on_log(log);
    }
    if (log.step % cfg.ckpt_every == 0 || log.step == stop) {
      save_checkpoint(make_checkpoint(cfg, st, features), ckpt_path);
      last_good = ckpt_path.string();
    }
  }
  if (!std::filesystem::exists(ckpt_path)) save_checkpoint(make_checkpoint(cfg, st, features), ckpt_path);
  res.checkpoint = ckpt_path;
  res.step = st.step;
  res.collapse_flagged = st.collapse_flagged;
  return res;
}

// Inference helpers -------------------------------------------------------------

TensorF encode_means(const TensorF& images, const EncoderConfig& cfg, const ModelParams<float>& encoder,
                     std::int64_t chunk) {
  const std::int64_t n = images.dim(0);
  const std::int64_t per = images.size() / static_cast<std::size_t>(n);
  std::vector<float> out;
  Shape lat;
  for (std::int64_t s = 0; s < n; s += chunk) {
    const std::int64_t m = std::min(chunk, n - s);
    TensorF x(Shape{m, images.dim(1), images.dim(2), images.dim(3)},
              std::vector<float>(images.data() + s * per, images.data() + (s + m) * per));
    const TensorF mu = encode(x, cfg, encoder).mu;
    lat = mu.shape();
    out.insert(out.end(), mu.values().begin(), mu.values().end());
  }
  lat[0] = n;
  return TensorF(lat, std::move(out));
}

TensorF decode_latents(const Autoencoder& ae, const TensorF& z, std::uint64_t noise_seed, std::uint64_t first_index,
                       std::int64_t chunk) {
  const int f = ae.cfg.encoder.downsample_factor;
  const std::int64_t n = z.dim(0);
  const std::int64_t per = z.size() / static_cast<std::size_t>(n);
  std::vector<float> out;
  Shape img;
  for (std::int64_t s = 0; s < n; s += chunk) {
    const std::int64_t m = std::min(chunk, n - s);
    TensorF zc(Shape{m, z.dim(1), z.dim(2), z.dim(3)}, std::vector<float>(z.data() + s * per, z.data() + (s + m) * per));
    TensorF x;
    if (ae.cfg.kind == ModelKind::kDgae) {
      const Shape shape{m, 3, z.dim(2) * f, z.dim(3) * f};
      const TensorF x1 = per_item_noise<float>(shape, noise_seed, "recon", first_index + static_cast<std::uint64_t>(s));
      VelocityFn<float> vel = [&](const TensorF& xt, std::span<const float> t, const TensorF& cond) {
        return unet_velocity(xt, t, cond, ae.cfg.unet, ae.decoder);
      };
      x = sample<float>(zc, ae.cfg.sampler, vel, f, x1, noise_seed, first_index + static_cast<std::uint64_t>(s));
    } else {
      x = gaussian_decode(zc, ae.cfg.encoder, ae.decoder);
    }
    img = x.shape();
    out.insert(out.end(), x.values().begin(), x.values().end());
  }
  img[0] = n;
  return TensorF(img, std::move(out));
}

// Latent generator ----------------------------------------------------------------

LatentGenResult train_latent_generator(const Autoencoder& ae, const Dataset& data, const TensorF& reference,
                                       const std::function<void(const ConvergencePoint&)>& on_point) {
  const RunConfig& cfg = ae.cfg;
  if (cfg.kind != ModelKind::kDgae) throw ConfigError("latent generator needs a dgae checkpoint");
  const LatentGenTrainConfig& lg = cfg.latent_gen;
  const TensorF means = encode_means(preprocess_eval(data.images, cfg.effective_crop()), cfg.encoder, ae.encoder);
  const std::int64_t n = means.dim(0), d = means.size() / static_cast<std::size_t>(means.dim(0));
  if (d != lg.net.latent_dim)
    throw ConfigError("latent size mismatch: encoder yields " + std::to_string(d) + ", generator expects " +
                      std::to_string(lg.net.latent_dim));

  // Per-dimension standardization.
  std::vector<double> mu(static_cast<std::size_t>(d), 0.0), sd(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += means[static_cast<std::size_t>(i * d + j)];
  for (auto& v : mu) v /= static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = means[static_cast<std::size_t>(i * d + j)] - mu[static_cast<std::size_t>(j)];
      sd[static_cast<std::size_t>(j)] += c * c;
    }
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(n)) + 1e-8;
  TensorF data_std(Shape{n, d});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) {
      const auto q = static_cast<std::size_t>(i * d + j);
      data_std[q] = static_cast<float>((means[q] - mu[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)]);
    }

  GaussianStats latent_stats(static_cast<int>(d));
  latent_stats.add_rows(data_std);
  const int fdim = cfg.feature_net.channels.back();
  GaussianStats real_stats(fdim);
  real_stats.add_rows(feature_embedding(reference, cfg.feature_net, ae.features));

  ModelParams<float> params = init_params<float>(latent_gen_architecture(lg.net), init_seed(cfg.seed, kLatentGen));
  OptimizerState<float> state = OptimizerState<float>::fresh(params);
  OptimizerConfig oc = cfg.optim;
  oc.lr_peak = lg.lr_peak;
  oc.lr_final = lg.lr_peak * 0.1;
  oc.warmup = lg.warmup;

  TensorF x1(Shape{lg.num_samples, d});
  Rng(cfg.seed, "latent_gen.sample").fill_normal<float>(x1.values());
  const Shape lat_shape{lg.decode_subset, means.dim(1), means.dim(2), means.dim(3)};

  LatentGenResult res;
  auto evaluate = [&](std::int64_t step) {
    TensorF x = x1;
    const int k = lg.sample_steps;
    std::vector<float> t(static_cast<std::size_t>(lg.num_samples));
    for (int i = k; i >= 1; --i) {
      std::fill(t.begin(), t.end(), static_cast<float>(static_cast<double>(i) / k));
      ag::Tape<float> tape;
      BoundParams<float> bp(tape, params, false);
      const TensorF v = latent_gen_forward(tape.constant(x), std::span<const float>(t), lg.net, bp).value();
      const float dt = static_cast<float>(1.0 / k);
      for (std::size_t q = 0; q < x.size(); ++q) x[q] -= dt * v[q];
    }
    ConvergencePoint p;
    p.step = step;
    GaussianStats sample_stats(static_cast<int>(d));
    sample_stats.add_rows(x);
    p.latent_frechet = frechet_distance(sample_stats.mean(), sample_stats.covariance(), latent_stats.mean(),
                                        latent_stats.covariance());
    TensorF z(lat_shape);
    for (std::int64_t i = 0; i < lg.decode_subset; ++i)
      for (std::int64_t j = 0; j < d; ++j) {
        const auto q = static_cast<std::size_t>(i * d + j);
        z[q] = static_cast<float>(x[q] * sd[static_cast<std::size_t>(j)] + mu[static_cast<std::size_t>(j)]);
      }
    const TensorF imgs = decode_latents(ae, z, cfg.seed, 0);
    GaussianStats gen_stats(fdim);
    gen_stats.add_rows(feature_embedding(imgs, cfg.feature_net, ae.features));
    p.frechet = frechet_distance(gen_stats.mean(), gen_stats.covariance(), real_stats.mean(), real_stats.covariance());
    res.curve.push_back(p);
    if (on_point) on_point(p);
  };

  const std::uint64_t batch_seed = stream_key(cfg.seed, "latent_gen");
  for (std::int64_t s = 0; s < lg.steps; ++s) {
    if (s % lg.eval_every == 0) evaluate(s);
    const auto idx = batch_indices(batch_seed, s, lg.batch_size, n);
    TensorF x0(Shape{lg.batch_size, d});
    for (std::int64_t i = 0; i < lg.batch_size; ++i)
      std::copy_n(data_std.data() + idx[static_cast<std::size_t>(i)] * d, d, x0.data() + i * d);
    const std::vector<float> t = draw_t(lg.batch_size, cfg.t_min, cfg.seed, "latent_gen.t", s);
    const TensorF eps = normal_tensor(x0.shape(), cfg.seed, "latent_gen.eps", s);
    TensorF xt(x0.shape()), target(x0.shape());
    for (std::int64_t i = 0; i < lg.batch_size; ++i)
      for (std::int64_t j = 0; j < d; ++j) {
        const auto q = static_cast<std::size_t>(i * d + j);
        const float ti = t[static_cast<std::size_t>(i)];
        xt[q] = (1.0f - ti) * x0[q] + ti * eps[q];
        target[q] = eps[q] - x0[q];
      }
    ag::Tape<float> tape;
    BoundParams<float> bp(tape, params, true);
    auto loss = ag::mse(latent_gen_forward(tape.constant(xt), std::span<const float>(t), lg.net, bp), tape.constant(target));
    if (!std::isfinite(scalar(loss)))
      throw NumericError("latent generator loss became non-finite at step " + std::to_string(s + 1));
    tape.backward(loss);
    ModelParams<float> g = bp.gradients();
    clip_gradients<float>({&g}, oc.clip_norm);
    adamw_update(params, g, state, lr_schedule(s + 1, lg.steps, oc.warmup, oc.lr_peak, oc.lr_final), oc);
  }
  evaluate(lg.steps);
  res.params = std::move(params);
  return res;
}

}  // namespace dgae
