// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "dgae/optim.hpp"
#include "support.hpp"

using namespace dgae;

namespace {

ModelParams<double> single(const std::string& name, std::vector<double> v) {
  ModelParams<double> p;
  const auto n = static_cast<std::int64_t>(v.size());
  p.add(name, TensorD({n}, std::move(v)));
  return p;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("learning rate schedule") {
  CHECK(lr_schedule(10000, 100000) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(100000, 100000) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_schedule(5000, 100000) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(lr_schedule(0, 100000) == 0.0);
  // cosine midpoint
  CHECK(lr_schedule(55000, 100000) == doctest::Approx(5.5e-5).epsilon(1e-12));
  double prev = 1;
  for (std::int64_t s = 10000; s <= 100000; s += 1000) {
    const double lr = lr_schedule(s, 100000);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_schedule(5, 100, 100), ConfigError);
  CHECK_THROWS_AS(lr_schedule(101, 100, 10), ConfigError);
  CHECK_THROWS_AS(lr_schedule(-1, 100, 10), ConfigError);
}

TEST_CASE("global-norm clipping") {
  SUBCASE("norm 2 is halved") {
    auto g = single("a.weight", {1.0, 1.0, 1.0, 1.0});
    CHECK(clip_gradients<double>({&g}, 1.0) == doctest::Approx(2.0));
    for (double v : g.at("a.weight").values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("norm below the threshold is untouched") {
    auto g = single("a.weight", {0.3, 0.4});
    CHECK(clip_gradients<double>({&g}, 1.0) == doctest::Approx(0.5));
    CHECK(g.at("a.weight")[0] == 0.3);
    CHECK(g.at("a.weight")[1] == 0.4);
  }
  SUBCASE("unit vector") {
    auto g = single("a.weight", {3.0, 4.0});
    clip_gradients<double>({&g}, 1.0);
    CHECK(g.at("a.weight")[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(g.at("a.weight")[1] == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("the norm is joint across networks") {
    auto a = single("a.weight", {3.0});
    auto b = single("b.bias", {4.0});
    CHECK(clip_gradients<double>({&a, &b}, 1.0) == doctest::Approx(5.0));
    CHECK(a.at("a.weight")[0] == doctest::Approx(0.6));
    CHECK(b.at("b.bias")[0] == doctest::Approx(0.8));
  }
  SUBCASE("non-finite gradients name the parameter") {
    auto g = single("enc.conv.weight", {1.0, NAN});
    try {
      clip_gradients<double>({&g}, 1.0);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("enc.conv.weight") != std::string::npos);
    }
  }
}

TEST_CASE("AdamW hand-computed step") {
  auto p = single("w.weight", {1.0});
  auto g = single("w.weight", {1.0});
  auto st = OptimizerState<double>::fresh(p);
  adamw_update(p, g, st, 0.1);
  CHECK(st.step == 1);
  CHECK(st.m.at("w.weight")[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(st.v.at("w.weight")[0] == doctest::Approx(0.05).epsilon(1e-12));
  const double expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.1);
  CHECK(p.at("w.weight")[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(p.at("w.weight")[0] == doctest::Approx(0.89).epsilon(1e-7));
}

TEST_CASE("weight decay applies to weights only") {
  ModelParams<double> p;
  p.add("conv.weight", TensorD({2}, {2.0, -4.0}));
  p.add("conv.bias", TensorD({2}, {2.0, -4.0}));
  p.add("norm.gamma", TensorD({1}, {1.5}));
  auto g = p.zeros_like();
  auto st = OptimizerState<double>::fresh(p);
  adamw_update(p, g, st, 0.01);
  CHECK(p.at("conv.weight")[0] == doctest::Approx(2.0 * (1 - 0.01 * 0.1)).epsilon(1e-15));
  CHECK(p.at("conv.weight")[1] == doctest::Approx(-4.0 * (1 - 0.01 * 0.1)).epsilon(1e-15));
  CHECK(p.at("conv.bias")[0] == 2.0);
  CHECK(p.at("norm.gamma")[0] == 1.5);
  CHECK(is_decayed_param("a.b.weight"));
  CHECK_FALSE(is_decayed_param("a.weights"));
  CHECK_FALSE(is_decayed_param("norm.beta"));
}

TEST_CASE("pure decay steps compose") {
  Rng rng(1, "decay");
  for (int k = 0; k < 100; ++k) {
    const double p0 = rng.uniform(-3, 3);
    const double lr = 1e-6;
    auto two = single("x.weight", {p0});
    auto st = OptimizerState<double>::fresh(two);
    const auto zero = two.zeros_like();
    adamw_update(two, zero, st, lr);
    adamw_update(two, zero, st, lr);
    auto one = single("x.weight", {p0});
    auto st1 = OptimizerState<double>::fresh(one);
    adamw_update(one, zero, st1, 2 * lr);
    // exact: two steps multiply by (1 - lr wd)^2; to first order that is one step at 2 lr
    CHECK(std::abs(two.at("x.weight")[0] - p0 * std::pow(1 - lr * 0.1, 2)) <= 1e-15 * std::abs(p0) + 1e-300);
    CHECK(std::abs(two.at("x.weight")[0] - one.at("x.weight")[0]) <= 1e-12);
  }
}

TEST_CASE("float and double updates agree") {
  auto pd = single("w.weight", {0.5, -0.25, 1.0});
  auto gd = single("w.weight", {0.1, -2.0, 0.0});
  auto pf = pd.cast<float>();
  const auto gf = gd.cast<float>();
  auto sd = OptimizerState<double>::fresh(pd);
  auto sf = OptimizerState<float>::fresh(pf);
  for (int s = 0; s < 5; ++s) {
    adamw_update(pd, gd, sd, 1e-3);
    adamw_update(pf, gf, sf, 1e-3);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(pf.at("w.weight")[i] == doctest::Approx(pd.at("w.weight")[i]).epsilon(1e-6));
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lr_peak = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.clip_norm = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mismatched sets are shape errors") {
  auto p = single("w.weight", {1.0, 2.0});
  auto g = single("w.weight", {1.0});
  auto st = OptimizerState<double>::fresh(p);
  CHECK_THROWS_AS(adamw_update(p, g, st, 0.1), ShapeError);
}

}  // TEST_SUITE
