// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include "doctest.h"
#include "dgae/config.hpp"
#include "support.hpp"

using namespace dgae;

namespace {

std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config_text(text, "cfg", overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty file gives validated defaults with a stable hash") {
  const auto a = parse_config_text("", "cfg");
  const auto b = parse_config_text("# only a comment\n\n", "other");
  CHECK(a.kind == ModelKind::kDgae);
  CHECK(a.loss.lambda == 0.0);
  CHECK(a.encoder.downsample_factor == 8);
  CHECK(a.encoder.channel_multipliers == std::vector<int>{1, 2, 2, 4});
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(a.canonical() == b.canonical());
  // the canonical text is itself a valid config with the same hash
  CHECK(parse_config_text(a.canonical(), "canonical").hash() == a.hash());
}

TEST_CASE("latent preset") {
  const auto c = parse_config_text("latent = f16c8\n", "cfg");
  CHECK(c.encoder.downsample_factor == 16);
  CHECK(c.encoder.latent_channels == 8);
  CHECK(c.encoder.channel_multipliers == std::vector<int>{1, 1, 2, 2, 4});
  CHECK(c.unet.cond_channels == 8);
  CHECK(c.latent_gen.net.latent_dim == 2 * 2 * 8);
  // explicit keys refine a preset regardless of order
  const auto d = parse_config_text("encoder.c = 2\nlatent = f8c4\n", "cfg");
  CHECK(d.encoder.latent_channels == 2);
  CHECK(parse_config_text("latent = f32c64\n", "cfg").encoder.channel_multipliers ==
        std::vector<int>{1, 1, 2, 2, 4, 4});
  CHECK(error_of("latent = f12c4\n").find("cfg:1: key 'encoder.f'") != std::string::npos);
  CHECK(error_of("latent = banana\n").find("cfg:1") != std::string::npos);
}

TEST_CASE("decoder presets") {
  const auto b = parse_config_text("decoder.preset = B\n", "cfg");
  const auto m = parse_config_text("decoder.preset = M\n", "cfg");
  const auto l = parse_config_text("decoder.preset = L\n", "cfg");
  CHECK(b.unet.base_channels < m.unet.base_channels);
  CHECK(m.unet.base_channels < l.unet.base_channels);
  CHECK(b.unet.time_emb_dim < l.unet.time_emb_dim);
  CHECK(parse_config_text("decoder.preset = L\ndecoder.base = 40\n", "cfg").unet.base_channels == 40);
  CHECK_FALSE(error_of("decoder.preset = XL\n").empty());
}

TEST_CASE("unknown keys are rejected with their location") {
  const auto msg = error_of("seed.global = 3\nlaten_channels = 4\n");
  CHECK(msg.find("laten_channels") != std::string::npos);
  CHECK(msg.find("cfg:2") != std::string::npos);
  const auto over = error_of("", {"laten_channels=4"});
  CHECK(over.find("laten_channels") != std::string::npos);
  CHECK(over.find("--set[0]") != std::string::npos);
}

TEST_CASE("type and range errors name key and line") {
  auto msg = error_of("run.batch_size = lots\n");
  CHECK(msg.find("run.batch_size") != std::string::npos);
  CHECK(msg.find("cfg:1") != std::string::npos);
  msg = error_of("\n\nencoder.f = 12\n");
  CHECK(msg.find("encoder.f") != std::string::npos);
  CHECK(msg.find("cfg:3") != std::string::npos);
  msg = error_of("loss.beta = -1\n");
  CHECK(msg.find("loss.beta") != std::string::npos);
  CHECK(msg.find("cfg:1") != std::string::npos);
  msg = error_of("encoder.c = 0\n");
  CHECK(msg.find("encoder.c") != std::string::npos);
  CHECK(msg.find("cfg:1") != std::string::npos);
  msg = error_of("sampler.stochastic = maybe\n");
  CHECK(msg.find("sampler.stochastic") != std::string::npos);
  CHECK_FALSE(error_of("not a key value line\n").empty());
  CHECK_FALSE(error_of("run.total_steps = 100\noptim.warmup = 100\n").empty());
  CHECK_FALSE(error_of("dataset.crop_size = 48\n").empty());
}

TEST_CASE("model kind sets the GAN weight default") {
  CHECK(parse_config_text("run.kind = baseline-vae\n", "cfg").loss.lambda == 0.5);
  CHECK(parse_config_text("run.kind = baseline-vae\nloss.lambda = 0\n", "cfg").loss.lambda == 0.0);
  CHECK(error_of("loss.lambda = 0.5\n").find("loss.lambda") != std::string::npos);
}

TEST_CASE("overrides apply after the file") {
  const auto c = parse_config_text("seed.global = 3\nrun.batch_size = 8\n", "cfg", {"seed.global=5"});
  CHECK(c.seed == 5);
  CHECK(c.batch_size == 8);
  CHECK(c.hash() != parse_config_text("seed.global = 3\nrun.batch_size = 8\n", "cfg").hash());
}

TEST_CASE("every registered key round-trips through the canonical form") {
  const auto keys = config_keys();
  CHECK(keys.size() > 40);
  const auto c = parse_config_text("", "cfg");
  const std::string canon = c.canonical();
  for (const auto& k : keys)
    if (k != "latent") CHECK(canon.find(k + "=") != std::string::npos);  // presets expand into other keys
}

TEST_CASE("config files") {
  const auto dir = test::scratch_dir("config");
  std::ofstream(dir / "a.cfg") << "latent = f8c2\nrun.total_steps = 50\noptim.warmup = 10\n";
  const auto c = parse_config_file(dir / "a.cfg", {"run.batch_size=4"});
  CHECK(c.encoder.latent_channels == 2);
  CHECK(c.batch_size == 4);
  CHECK_THROWS_AS(parse_config_file(dir / "missing.cfg"), IoError);
}

}  // TEST_SUITE
