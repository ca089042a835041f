// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include "doctest.h"
#include "dgae/checkpoint.hpp"
#include "dgae/csv.hpp"
#include "dgae/training.hpp"
#include "support.hpp"
#include "tiny.hpp"

using namespace dgae;

namespace {

const ModelParams<float>& tiny_features() {
  static const ModelParams<float> f = [] {
    const auto cfg = test::tiny_config();
    return train_feature_extractor(cfg.feature_net, cfg.features, generate_procedural_dataset(cfg.dataset), cfg.seed);
  }();
  return f;
}

std::vector<StepLog> run_steps(const RunConfig& cfg, TrainState& st, std::int64_t n) {
  const auto data = generate_procedural_dataset(cfg.dataset);
  std::vector<StepLog> logs;
  for (std::int64_t k = 0; k < n; ++k) logs.push_back(train_step(cfg, data, tiny_features(), st));
  return logs;
}

bool same_trace(const std::vector<StepLog>& a, const std::vector<StepLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].step != b[i].step || a[i].total != b[i].total || a[i].terms != b[i].terms || a[i].lr != b[i].lr)
      return false;
  return true;
}

bool same_params(const TrainState& a, const TrainState& b) {
  if (a.nets.size() != b.nets.size()) return false;
  for (const auto& [name, p] : a.nets) {
    const auto& q = b.nets.at(name);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!test::bit_equal(p.entries()[i].second, q.entries()[i].second)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("batches are slices of per-epoch permutations") {
  std::vector<std::int64_t> seen;
  for (std::int64_t s = 0; s < 4; ++s) {
    const auto b = batch_indices(1, s, 5, 20);
    CHECK(b.size() == 5);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  for (std::int64_t i = 0; i < 20; ++i) CHECK(seen[static_cast<std::size_t>(i)] == i);
  CHECK(batch_indices(1, 7, 5, 20) == batch_indices(1, 7, 5, 20));
  CHECK(batch_indices(1, 0, 20, 20) != batch_indices(1, 1, 20, 20));
  CHECK(batch_indices(1, 0, 5, 20) != batch_indices(2, 0, 5, 20));
  // a batch straddling an epoch boundary
  const auto cross = batch_indices(3, 1, 15, 20);
  CHECK(std::set<std::int64_t>(cross.begin(), cross.begin() + 5).size() == 5);
}

TEST_CASE("discriminator alternation") {
  const auto base = test::tiny_config({"run.kind=baseline-vae"});
  CHECK_FALSE(is_discriminator_step(base, 0));
  CHECK_FALSE(is_discriminator_step(base, 3));
  CHECK_FALSE(is_discriminator_step(base, 4));
  CHECK(is_discriminator_step(base, 5));
  CHECK_FALSE(is_discriminator_step(base, 6));
  CHECK(is_discriminator_step(base, 7));
  CHECK_FALSE(is_discriminator_step(test::tiny_config(), 5));
  CHECK_FALSE(is_discriminator_step(test::tiny_config({"run.kind=baseline-vae", "loss.lambda=0"}), 5));
}

TEST_CASE("the DGAE step logs its terms and is reproducible") {
  const auto cfg = test::tiny_config();
  auto a = init_train_state(cfg);
  auto b = init_train_state(cfg);
  CHECK(a.nets.count(kEncoder) == 1);
  CHECK(a.nets.count(kUNet) == 1);
  CHECK(a.nets.count(kDisc) == 0);
  const auto la = run_steps(cfg, a, 10);
  const auto lb = run_steps(cfg, b, 10);
  CHECK(same_trace(la, lb));
  CHECK(same_params(a, b));
  CHECK(a.step == 10);
  for (const auto& l : la) {
    CHECK(l.terms.count("dsm") == 1);
    CHECK(l.terms.count("kl") == 1);
    CHECK(l.terms.count("lpips") == 1);
    CHECK(l.terms.count("gan_g") == 0);
    CHECK(std::isfinite(l.total));
    const double expect = cfg.loss.alpha * l.terms.at("dsm") + cfg.loss.beta * l.terms.at("kl") +
                          cfg.loss.eta * l.terms.at("lpips");
    CHECK(std::abs(l.total - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
  }
  CHECK(la[0].step == 1);
  CHECK(la[0].lr == doctest::Approx(lr_schedule(1, 10, 2)));
  auto c = init_train_state(test::tiny_config({"seed.global=2"}));
  CHECK_FALSE(same_trace(la, run_steps(test::tiny_config({"seed.global=2"}), c, 10)));
}

TEST_CASE("the baseline alternates generator and discriminator updates") {
  const auto cfg = test::tiny_config({"run.kind=baseline-vae"});
  auto st = init_train_state(cfg);
  CHECK(st.nets.count(kDecoder) == 1);
  CHECK(st.nets.count(kDisc) == 1);
  const auto disc_before = st.nets.at(kDisc);
  const auto logs = run_steps(cfg, st, 8);
  for (const auto& l : logs) {
    const std::int64_t s = l.step - 1;
    CAPTURE(s);
    if (is_discriminator_step(cfg, s)) {
      CHECK(l.terms.count("gan_d") == 1);
      CHECK(l.terms.count("rec") == 0);
      CHECK(l.total == l.terms.at("gan_d"));
    } else {
      CHECK(l.terms.count("rec") == 1);
      CHECK(l.terms.count("gan_d") == 0);
      CHECK(l.terms.count("gan_g") == (s >= cfg.disc_start ? 1u : 0u));
    }
  }
  CHECK(st.opt.at(kDisc).step == 2);  // updates 5 and 7 (0-based)
  CHECK_FALSE(test::bit_equal(disc_before.entries()[0].second, st.nets.at(kDisc).entries()[0].second));
  auto again = init_train_state(cfg);
  CHECK(same_trace(logs, run_steps(cfg, again, 8)));
}

TEST_CASE("zero GAN weight is a plain VAE with perceptual loss") {
  const auto cfg = test::tiny_config({"run.kind=baseline-vae", "loss.lambda=0"});
  auto st = init_train_state(cfg);
  for (const auto& l : run_steps(cfg, st, 8)) {
    CHECK(l.terms.count("gan_d") == 0);
    CHECK(l.terms.count("gan_g") == 0);
    CHECK(l.terms.count("lpips") == 1);
  }
  if (st.opt.count(kDisc)) CHECK(st.opt.at(kDisc).step == 0);
}

TEST_CASE("zero KL weight still reports the term") {
  const auto cfg = test::tiny_config({"loss.beta=0"});
  auto st = init_train_state(cfg);
  const auto logs = run_steps(cfg, st, 2);
  CHECK(logs[0].terms.count("kl") == 1);
  CHECK(logs[0].total == doctest::Approx(logs[0].terms.at("dsm") + cfg.loss.eta * logs[0].terms.at("lpips")));
}

TEST_CASE("perceptual loss requires trained features") {
  const auto cfg = test::tiny_config();
  auto st = init_train_state(cfg);
  const auto untrained = init_params<float>(feature_net_architecture(cfg.feature_net), 1);
  CHECK_THROWS_AS(train_step(cfg, generate_procedural_dataset(cfg.dataset), untrained, st), ConfigError);
}

TEST_CASE("checkpoint resume continues bit-exactly") {
  for (const char* kind : {"dgae", "baseline-vae"}) {
    CAPTURE(kind);
    const auto cfg = test::tiny_config({std::string("run.kind=") + kind});
    auto straight = init_train_state(cfg);
    const auto full = run_steps(cfg, straight, 10);

    auto first = init_train_state(cfg);
    const auto head = run_steps(cfg, first, 5);
    const std::string bytes = encode_checkpoint(make_checkpoint(cfg, first, tiny_features()));
    auto resumed = restore_train_state(decode_checkpoint(bytes), cfg);
    CHECK(resumed.step == 5);
    auto tail = run_steps(cfg, resumed, 5);
    std::vector<StepLog> joined = head;
    joined.insert(joined.end(), tail.begin(), tail.end());
    CHECK(same_trace(full, joined));
    CHECK(same_params(straight, resumed));
    for (const auto& [name, o] : straight.opt) {
      CHECK(o.step == resumed.opt.at(name).step);
      for (std::size_t i = 0; i < o.m.size(); ++i) {
        CHECK(test::bit_equal(o.m.entries()[i].second, resumed.opt.at(name).m.entries()[i].second));
        CHECK(test::bit_equal(o.v.entries()[i].second, resumed.opt.at(name).v.entries()[i].second));
      }
    }
  }
}

TEST_CASE("restoring under a different config is refused") {
  const auto cfg = test::tiny_config();
  auto st = init_train_state(cfg);
  const auto ckpt = make_checkpoint(cfg, st, tiny_features());
  CHECK_THROWS_AS(restore_train_state(ckpt, test::tiny_config({"loss.beta=0"})), ConfigError);
  CHECK(checkpoint_config(ckpt).hash() == cfg.hash());
  const auto ae = load_autoencoder(ckpt);
  CHECK(ae.cfg.hash() == cfg.hash());
  CHECK(ae.checkpoint_hash == ckpt.content_hash());
}

TEST_CASE("feature extractor learns the labels") {
  const auto cfg = test::tiny_config({"features.steps=150", "dataset.num_images=256"});
  const auto data = generate_procedural_dataset(cfg.dataset);
  std::vector<double> losses;
  const auto f = train_feature_extractor(cfg.feature_net, cfg.features, data, 1,
                                         [&](std::int64_t, double l) { losses.push_back(l); });
  CHECK(f.tags.at("trained") == "true");
  REQUIRE(losses.size() >= 2);
  CHECK(losses.back() < losses.front());
  CHECK_NOTHROW(require_trained_features(f));
}

TEST_CASE("train_run writes logs and checkpoints and resumes") {
  const auto dir = test::scratch_dir("train_run");
  const auto cfg = test::tiny_config();
  const auto full = train_run(cfg, dir / "full");
  CHECK(full.step == 10);
  CHECK(std::filesystem::exists(dir / "full" / "ckpt.bin"));
  CHECK(std::filesystem::exists(dir / "full" / "config.txt"));
  CHECK(std::filesystem::exists(dir / "_features"));
  const auto table = csv_read(dir / "full" / "train.csv", kTrainCsvSchema);
  CHECK(table.rows.size() == 10);

  TrainOptions stop;
  stop.stop_at = 7;
  CHECK(train_run(cfg, dir / "split", stop).step == 7);
  TrainOptions resume;
  const auto res = train_run(cfg, dir / "split", resume);
  CHECK(res.step == 10);
  CHECK(read_file(dir / "split" / "train.csv") == read_file(dir / "full" / "train.csv"));
  CHECK(load_checkpoint(dir / "split" / "ckpt.bin").content_hash() ==
        load_checkpoint(dir / "full" / "ckpt.bin").content_hash());
}

TEST_CASE("a diverging run aborts naming the last good checkpoint") {
  const auto dir = test::scratch_dir("diverge");
  const auto cfg = test::tiny_config({"optim.lr_peak=1e30", "optim.clip_norm=1e30", "run.ckpt_every=1"});
  try {
    train_run(cfg, dir / "run");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("last good checkpoint") != std::string::npos);
  }
}

}  // TEST_SUITE
