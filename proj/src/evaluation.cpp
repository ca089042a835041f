// SPDX-License-Identifier: Apache-2.0
#include "dgae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dgae/csv.hpp"
#include "dgae/metrics.hpp"

namespace dgae {

std::string EvalReport::to_text() const {
  return "model=" + model + "\nconfig_hash=" + config_hash + "\ncheckpoint_hash=" + checkpoint_hash +
         "\ntrain_step=" + std::to_string(train_step) + "\neval_seed=" + std::to_string(eval_seed) +
         "\nsampler_steps=" + std::to_string(sampler_steps) + "\nnum_images=" + std::to_string(num_images) +
         "\npsnr_mean=" + csv_number(psnr_mean) + "\nssim_mean=" + csv_number(ssim_mean) +
         "\nfrechet_distance=" + csv_number(frechet_distance) + "\nlatent_tv=" + csv_number(latent_tv) + "\n";
}

std::vector<std::int64_t> eval_subset(std::uint64_t eval_seed, std::int64_t pool, std::int64_t count) {
  if (count < 1 || count > pool) throw ConfigError("eval subset: need 1 <= num_images <= pool");
  std::vector<std::int64_t> perm(static_cast<std::size_t>(pool));
  std::iota(perm.begin(), perm.end(), std::int64_t{0});
  Rng rng(eval_seed, "eval_subset");
  for (std::int64_t i = pool - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
  perm.resize(static_cast<std::size_t>(count));
  std::sort(perm.begin(), perm.end());
  return perm;
}

TensorF held_out_images(const RunConfig& cfg, const std::vector<std::int64_t>& positions) {
  const int s = cfg.dataset.image_size;
  const std::int64_t n = static_cast<std::int64_t>(positions.size());
  TensorF batch(Shape{n, 3, s, s});
  const std::size_t per = static_cast<std::size_t>(3 * s * s);
  for (std::int64_t i = 0; i < n; ++i) {
    int shape = 0, color = 0;
    const TensorF img = generate_image(cfg.dataset, cfg.dataset.num_images + positions[static_cast<std::size_t>(i)], &shape, &color);
    std::copy(img.values().begin(), img.values().end(), batch.data() + static_cast<std::size_t>(i) * per);
  }
  return preprocess_eval(batch, cfg.effective_crop());
}

EvalReport evaluate_reconstruction(const Autoencoder& ae, const RunConfig& eval_cfg) {
  return evaluate_reconstruction(ae, eval_cfg, nullptr, nullptr, nullptr);
}

EvalReport evaluate_reconstruction(const Autoencoder& ae, const RunConfig& eval_cfg, TensorF* originals,
                                   TensorF* reconstructions, TensorF* latents) {
  const auto positions = eval_subset(eval_cfg.eval_seed, eval_cfg.eval.pool, eval_cfg.eval.num_images);
  const TensorF x = held_out_images(ae.cfg, positions);
  const TensorF mu = encode_means(x, ae.cfg.encoder, ae.encoder, eval_cfg.eval.batch_size);

  // Sampler noise is keyed by pool position so subsets of the pool see the same noise per image.
  Autoencoder dec = ae;
  dec.cfg.sampler = eval_cfg.sampler;
  const std::size_t per_lat = mu.size() / static_cast<std::size_t>(mu.dim(0));
  // Decode in chunks of consecutive subset entries; each item's noise index is its pool position.
  TensorF x_hat(x.shape());
  const std::size_t per_img = x.size() / static_cast<std::size_t>(x.dim(0));
  const std::int64_t n = x.dim(0);
  for (std::int64_t s = 0; s < n;) {
    // Longest run of consecutive pool positions starting at s, capped at the batch size.
    std::int64_t e = s + 1;
    while (e < n && e - s < eval_cfg.eval.batch_size &&
           positions[static_cast<std::size_t>(e)] == positions[static_cast<std::size_t>(e - 1)] + 1)
      ++e;
    TensorF zc(Shape{e - s, mu.dim(1), mu.dim(2), mu.dim(3)},
               std::vector<float>(mu.data() + static_cast<std::size_t>(s) * per_lat, mu.data() + static_cast<std::size_t>(e) * per_lat));
    const TensorF r = decode_latents(dec, zc, eval_cfg.eval_seed, static_cast<std::uint64_t>(positions[static_cast<std::size_t>(s)]),
                                     eval_cfg.eval.batch_size);
    std::copy(r.values().begin(), r.values().end(), x_hat.data() + static_cast<std::size_t>(s) * per_img);
    s = e;
  }

  EvalReport rep;
  rep.psnr_mean = psnr(x, x_hat).mean;
  rep.ssim_mean = ssim(x, x_hat).mean;
  rep.frechet_distance = frechet_feature_distance(x, x_hat, ae.cfg.feature_net, ae.features);
  // A 1x1 latent grid has no neighbours; TV is undefined there.
  rep.latent_tv = mu.dim(2) >= 2 && mu.dim(3) >= 2 ? latent_total_variation(mu) : std::nan("");
  rep.num_images = n;
  rep.model = to_string(ae.cfg.kind);
  rep.checkpoint_hash = ae.checkpoint_hash;
  rep.config_hash = ae.cfg.hash();
  rep.train_step = ae.step;
  rep.sampler_steps = ae.cfg.kind == ModelKind::kDgae ? eval_cfg.sampler.num_steps : 0;
  rep.eval_seed = eval_cfg.eval_seed;
  if (!std::isfinite(rep.psnr_mean) || !std::isfinite(rep.ssim_mean) || !std::isfinite(rep.frechet_distance))
    throw NumericError("evaluation produced non-finite metrics");
  if (originals) *originals = x;
  if (reconstructions) *reconstructions = x_hat;
  if (latents) *latents = mu;
  return rep;
}

void append_results_row(const std::filesystem::path& csv, const EvalReport& r) {
  csv_ensure(csv, kResultsCsvSchema, kResultsCsvHeader);
  csv_append(csv, r.model + "," + r.config_hash + "," + r.checkpoint_hash + "," + std::to_string(r.train_step) + "," +
                      std::to_string(r.eval_seed) + "," + std::to_string(r.sampler_steps) + "," +
                      std::to_string(r.num_images) + "," + csv_number(r.psnr_mean) + "," + csv_number(r.ssim_mean) +
                      "," + csv_number(r.frechet_distance) + "," + csv_number(r.latent_tv));
}

}  // namespace dgae
