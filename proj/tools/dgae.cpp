// SPDX-License-Identifier: Apache-2.0
//
// dgae command-line driver.
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric abort, 4 I/O or corrupt
// file, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "dgae/checkpoint.hpp"
#include "dgae/config.hpp"
#include "dgae/csv.hpp"
#include "dgae/evaluation.hpp"
#include "dgae/metrics.hpp"
#include "dgae/sweep.hpp"
#include "dgae/training.hpp"

namespace fs = std::filesystem;
using namespace dgae;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;

  RunConfig load() const {
    if (file.empty()) return parse_config_text("", "defaults", sets);
    return parse_config_file(file, sets);
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.file, "Config file (key = value lines)");
  cmd->add_option("--set", a.sets, "Override a key, e.g. --set loss.beta=0 (repeatable, applied after the file)");
}

/// --out beats $DGAE_OUT beats run.out_dir.
fs::path output_dir(const std::string& flag, const RunConfig& cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("DGAE_OUT"); env && *env) return env;
  return cfg.out_dir;
}

/// config.txt plus hashes.txt (SHA-256 of every other regular file, sorted by name).
void finalize_dir(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  if (!fs::exists(dir / "config.txt")) write_file_atomic(dir / "config.txt", "# config_hash: " + cfg.hash() + "\n" + cfg.canonical());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "hashes.txt" && e.path().extension() != ".tmp") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string text;
  for (const auto& f : files) text += sha256_file(f) + "  " + fs::relative(f, dir).generic_string() + "\n";
  write_file_atomic(dir / "hashes.txt", text);
}

/// Side by side [3, H, W1 + W2].
TensorF hconcat(const TensorF& a, const TensorF& b) {
  const std::int64_t h = a.dim(1), wa = a.dim(2), wb = b.dim(2);
  TensorF out(Shape{3, h, wa + wb});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < wa; ++x) out[static_cast<std::size_t>((c * h + y) * (wa + wb) + x)] = a[static_cast<std::size_t>((c * h + y) * wa + x)];
      for (std::int64_t x = 0; x < wb; ++x)
        out[static_cast<std::size_t>((c * h + y) * (wa + wb) + wa + x)] = b[static_cast<std::size_t>((c * h + y) * wb + x)];
    }
  return out;
}

/// [0,1] RGB -> [-1,1] with nearest upsampling by `f`.
TensorF rgb_image(const TensorF& rgb01, std::int64_t n, int f) {
  const std::int64_t h = rgb01.dim(2), w = rgb01.dim(3);
  TensorF out(Shape{3, h * f, w * f});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h * f; ++y)
      for (std::int64_t x = 0; x < w * f; ++x)
        out[static_cast<std::size_t>((c * h * f + y) * w * f + x)] = 2.0f * rgb01.at(n, c, y / f, x / f) - 1.0f;
  return out;
}

std::string index_name(std::int64_t i, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld%s", static_cast<long long>(i), suffix);
  return buf;
}

int run(int argc, char** argv) {
  CLI::App app{"Diffusion-guided autoencoder: training, evaluation and analysis at desk scale"};
  app.require_subcommand(1);
  app.footer("Environment: DGAE_OUT overrides run.out_dir (an explicit --out wins).\nExit codes: 0 ok, 2 config error, 3 numeric abort, 4 I/O error.");

  // train
  ConfigArgs train_cfg;
  std::string train_out;
  bool no_resume = false;
  std::int64_t stop_at = -1;
  auto* train = app.add_subcommand("train", "Train a dgae or baseline-vae model");
  add_config_options(train, train_cfg);
  train->add_option("-o,--out", train_out, "Run directory");
  train->add_flag("--no-resume", no_resume, "Start over even if a checkpoint exists");
  train->add_option("--stop-at", stop_at, "Stop after this many updates (default run.total_steps)");

  // eval
  ConfigArgs eval_cfg;
  std::string eval_ckpt, eval_results, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate reconstructions of a checkpoint on the held-out set");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--set", eval_cfg.sets, "Override eval.*, sampler.* or seed.eval keys");
  eval->add_option("--results", eval_results, "results.csv to append to (default <out>/results.csv)");
  eval->add_option("-o,--out", eval_out, "Directory for the report (default: checkpoint directory)");

  // reconstruct
  std::string rec_ckpt, rec_out;
  std::int64_t rec_count = 8;
  std::vector<std::string> rec_sets;
  auto* reconstruct = app.add_subcommand("reconstruct", "Write (original | reconstruction) PPM pairs");
  reconstruct->add_option("--ckpt", rec_ckpt, "Checkpoint file")->required();
  reconstruct->add_option("-o,--out", rec_out, "Output directory")->required();
  reconstruct->add_option("-n,--count", rec_count, "Number of held-out images")->capture_default_str();
  reconstruct->add_option("--set", rec_sets, "Override sampler.* or seed.eval keys");

  // sample
  std::string smp_ckpt, smp_out;
  std::int64_t smp_count = 8;
  std::uint64_t smp_seed = 0;
  int smp_steps = 0;
  auto* smp = app.add_subcommand("sample", "Decode latents drawn from the N(0, I) prior");
  smp->add_option("--ckpt", smp_ckpt, "Checkpoint file")->required();
  smp->add_option("-o,--out", smp_out, "Output directory")->required();
  smp->add_option("-n,--count", smp_count, "Number of images")->capture_default_str();
  smp->add_option("--seed", smp_seed, "Noise seed")->capture_default_str();
  smp->add_option("--steps", smp_steps, "Sampler steps (default: checkpoint config)");

  // latent-vis
  std::vector<std::string> vis_ckpts;
  std::string vis_out;
  bool shared_basis = false;
  std::int64_t vis_count = 16;
  auto* vis = app.add_subcommand("latent-vis", "Project latents to RGB with a 3-component PCA");
  vis->add_option("--ckpt", vis_ckpts, "Checkpoint file(s)")->required();
  vis->add_option("-o,--out", vis_out, "Output directory")->required();
  vis->add_flag("--shared-basis", shared_basis, "Fit one projection over the latents of all checkpoints");
  vis->add_option("-n,--count", vis_count, "Number of held-out images")->capture_default_str();

  // sweep
  ConfigArgs sweep_cfg;
  std::string sweep_axis, sweep_out;
  std::vector<std::string> sweep_values;
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate a grid along one experiment axis");
  add_config_options(sweep, sweep_cfg);
  sweep->add_option("--axis", sweep_axis,
                    "latent-size | spatial-f | decoder-scale | encoder-scale | discriminator-scale | latent-gen")
      ->required();
  sweep->add_option("--values", sweep_values, "Axis values (default per axis)")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Seeds")->delimiter(',')->capture_default_str();
  sweep->add_option("-o,--out", sweep_out, "Sweep directory");

  // describe
  ConfigArgs desc_cfg;
  auto* describe = app.add_subcommand("describe", "Print the resolved config and every network's layer table");
  add_config_options(describe, desc_cfg);

  // gen-data
  ConfigArgs gen_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write the procedural dataset as PPM files plus manifest.tsv");
  add_config_options(gen, gen_cfg);
  gen->add_option("-o,--out", gen_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*train) {
    const RunConfig cfg = train_cfg.load();
    const fs::path dir = output_dir(train_out, cfg);
    TrainOptions opt;
    opt.resume = !no_resume;
    opt.stop_at = stop_at;
    opt.on_log = [](const StepLog& l) {
      std::cout << "step " << l.step << " lr " << l.lr << " total " << l.total;
      for (const auto& [k, v] : l.terms) std::cout << ' ' << k << ' ' << v;
      std::cout << std::endl;
    };
    opt.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << std::endl; };
    std::cout << "config " << cfg.hash() << " -> " << dir.string() << std::endl;
    const TrainResult r = train_run(cfg, dir, opt);
    finalize_dir(dir, cfg);
    std::cout << "checkpoint " << r.checkpoint.string() << " at step " << r.step << std::endl;
    return 0;
  }

  if (*eval) {
    const Checkpoint ck = load_checkpoint(eval_ckpt);
    const Autoencoder ae = load_autoencoder(ck);
    std::vector<std::string> sets;
    for (const auto& s : eval_cfg.sets) {
      const std::string key = s.substr(0, s.find('='));
      if (key.rfind("eval.", 0) != 0 && key.rfind("sampler.", 0) != 0 && key != "seed.eval")
        throw ConfigError("--set " + s + ": eval accepts only eval.*, sampler.* and seed.eval overrides");
      sets.push_back(s);
    }
    const RunConfig ecfg = parse_config_text(ck.metadata["config"].get<std::string>(), "checkpoint config", sets);
    const EvalReport rep = evaluate_reconstruction(ae, ecfg);
    const fs::path dir = eval_out.empty() ? fs::path(eval_ckpt).parent_path() : fs::path(eval_out);
    const fs::path base = dir.empty() ? fs::path(".") : dir;
    write_file_atomic(base / ("eval-" + ecfg.hash() + ".txt"), rep.to_text());
    append_results_row(eval_results.empty() ? base / "results.csv" : fs::path(eval_results), rep);
    std::cout << rep.to_text();
    return 0;
  }

  if (*reconstruct) {
    const Checkpoint ck = load_checkpoint(rec_ckpt);
    const Autoencoder ae = load_autoencoder(ck);
    const RunConfig ecfg = parse_config_text(ck.metadata["config"].get<std::string>(), "checkpoint config", rec_sets);
    RunConfig sub = ecfg;
    sub.eval.num_images = std::min(rec_count, ecfg.eval.pool);
    TensorF x, xh;
    const EvalReport rep = evaluate_reconstruction(ae, sub, &x, &xh, nullptr);
    const auto positions = eval_subset(sub.eval_seed, sub.eval.pool, sub.eval.num_images);
    fs::create_directories(rec_out);
    std::string manifest = "pool_position\tpath\tpsnr\n";
    const PerImage p = psnr(x, xh);
    for (std::int64_t i = 0; i < x.dim(0); ++i) {
      const std::string name = index_name(positions[static_cast<std::size_t>(i)], "_pair.ppm");
      write_image_file(fs::path(rec_out) / name, hconcat(batch_row(x, i), batch_row(xh, i)));
      manifest += std::to_string(positions[static_cast<std::size_t>(i)]) + "\t" + name + "\t" +
                  csv_number(p.values[static_cast<std::size_t>(i)]) + "\n";
    }
    write_file_atomic(fs::path(rec_out) / "manifest.tsv", manifest);
    write_file_atomic(fs::path(rec_out) / "report.txt", rep.to_text());
    finalize_dir(rec_out, ecfg);
    std::cout << rep.to_text();
    return 0;
  }

  if (*smp) {
    const Checkpoint ck = load_checkpoint(smp_ckpt);
    Autoencoder ae = load_autoencoder(ck);
    if (smp_steps > 0) ae.cfg.sampler.num_steps = smp_steps;
    const int side = ae.cfg.effective_crop() / ae.cfg.encoder.downsample_factor;
    TensorF z(Shape{smp_count, ae.cfg.encoder.latent_channels, side, side});
    Rng(smp_seed, "prior").fill_normal<float>(z.values());
    const TensorF imgs = decode_latents(ae, z, smp_seed, 0);
    fs::create_directories(smp_out);
    std::string manifest = "# seed=" + std::to_string(smp_seed) + " steps=" +
                           std::to_string(ae.cfg.kind == ModelKind::kDgae ? ae.cfg.sampler.num_steps : 0) +
                           " checkpoint_hash=" + ae.checkpoint_hash + "\nindex\tpath\n";
    for (std::int64_t i = 0; i < smp_count; ++i) {
      const std::string name = index_name(i, ".ppm");
      write_image_file(fs::path(smp_out) / name, batch_row(imgs, i));
      manifest += std::to_string(i) + "\t" + name + "\n";
    }
    write_file_atomic(fs::path(smp_out) / "manifest.tsv", manifest);
    finalize_dir(smp_out, ae.cfg);
    return 0;
  }

  if (*vis) {
    std::vector<Autoencoder> aes;
    std::vector<TensorF> lat;
    for (const auto& p : vis_ckpts) {
      aes.push_back(load_autoencoder(load_checkpoint(p)));
      const RunConfig& c = aes.back().cfg;
      const auto positions = eval_subset(c.eval_seed, c.eval.pool, std::min(vis_count, c.eval.pool));
      lat.push_back(encode_means(held_out_images(c, positions), c.encoder, aes.back().encoder));
    }
    std::vector<LatentProjection> proj;
    if (shared_basis) {
      std::vector<const TensorF*> all;
      for (const auto& z : lat) all.push_back(&z);
      proj.assign(lat.size(), fit_latent_projection(all));
    } else {
      for (const auto& z : lat) proj.push_back(fit_latent_projection({&z}));
    }
    fs::create_directories(vis_out);
    std::string manifest = std::string("# shared_basis=") + (shared_basis ? "true" : "false") + "\nmodel\tcheckpoint_hash\tindex\tlatent\tupsampled\ttv\n";
    for (std::size_t k = 0; k < aes.size(); ++k) {
      const TensorF rgb = latent_rgb(proj[k], lat[k]);
      const std::string tag = std::to_string(k) + "-" + to_string(aes[k].cfg.kind);
      const double tv = lat[k].dim(2) >= 2 ? latent_total_variation(lat[k]) : std::nan("");
      for (std::int64_t i = 0; i < rgb.dim(0); ++i) {
        const std::string a = tag + "_" + index_name(i, "_latent.ppm");
        const std::string b = tag + "_" + index_name(i, "_up.ppm");
        write_image_file(fs::path(vis_out) / a, rgb_image(rgb, i, 1));
        write_image_file(fs::path(vis_out) / b, rgb_image(rgb, i, aes[k].cfg.encoder.downsample_factor));
        manifest += to_string(aes[k].cfg.kind) + "\t" + aes[k].checkpoint_hash + "\t" + std::to_string(i) + "\t" + a +
                    "\t" + b + "\t" + csv_number(tv) + "\n";
      }
    }
    write_file_atomic(fs::path(vis_out) / "manifest.tsv", manifest);
    finalize_dir(vis_out, aes.front().cfg);
    return 0;
  }

  if (*sweep) {
    SweepSpec spec;
    spec.axis = parse_sweep_axis(sweep_axis);
    spec.values = sweep_values;
    spec.seeds = sweep_seeds;
    if (!sweep_cfg.file.empty()) {
      spec.base_text = read_file(sweep_cfg.file);
      spec.base_origin = sweep_cfg.file;
    }
    spec.base_overrides = sweep_cfg.sets;
    const RunConfig base = parse_config_text(spec.base_text, spec.base_origin, spec.base_overrides);
    const fs::path dir = output_dir(sweep_out, base);
    const SweepResult r = run_sweep(spec, dir, [](const std::string& m) { std::cout << m << std::endl; });
    std::size_t failed = 0;
    for (const auto& row : r.rows) failed += row.status != "ok";
    std::cout << r.rows.size() << " cells, " << failed << " failed; see " << (dir / "sweep.csv").string() << std::endl;
    return 0;
  }

  if (*describe) {
    const RunConfig cfg = desc_cfg.load();
    std::cout << "# config_hash: " << cfg.hash() << "\n" << cfg.canonical() << "\n";
    auto section = [](const char* name, const Architecture& a) {
      std::cout << "== " << name << " ==\n";
      a.print(std::cout);
      std::cout << "total parameters: " << a.param_count() << "\n\n";
    };
    section("encoder", encoder_architecture(cfg.encoder));
    if (cfg.kind == ModelKind::kDgae) {
      section("unet", unet_architecture(cfg.unet));
    } else {
      section("gaussian decoder", gaussian_decoder_architecture(cfg.encoder));
      section("discriminator", discriminator_architecture(DiscriminatorConfig::from_scale(cfg.disc_scale)));
    }
    section("feature extractor", feature_net_architecture(cfg.feature_net));
    section("latent generator", latent_gen_architecture(cfg.latent_gen.net));
    return 0;
  }

  if (*gen) {
    const RunConfig cfg = gen_cfg.load();
    const fs::path dir = output_dir(gen_out, cfg);
    write_dataset(dir, generate_procedural_dataset(cfg.dataset));
    finalize_dir(dir, cfg);
    std::cout << "wrote " << cfg.dataset.num_images << " images to " << dir.string() << std::endl;
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << std::endl;
    return 4;
  } catch (const CorruptionError& e) {
    std::cerr << "corrupt file: " << e.what() << std::endl;
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
