// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "dgae/data.hpp"
#include "support.hpp"

using namespace dgae;

namespace {

TensorF image_2x2(float a, float b, float c, float d) { return TensorF({1, 1, 2, 2}, {a, b, c, d}); }

TensorF ramp(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  TensorF t({n, c, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) / static_cast<float>(t.size());
  return t;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generation is a pure function of the spec") {
  DatasetSpec spec;
  spec.seed = 7;
  spec.num_images = 32;
  const auto a = generate_procedural_dataset(spec);
  const auto b = generate_procedural_dataset(spec);
  CHECK(test::bit_equal(a.images, b.images));
  CHECK(a.shape_labels == b.shape_labels);
  CHECK(a.color_labels == b.color_labels);

  spec.seed = 8;
  CHECK_FALSE(test::bit_equal(a.images, generate_procedural_dataset(spec).images));
}

TEST_CASE("single image matches its row in the full dataset") {
  DatasetSpec spec;
  spec.num_images = 12;
  const auto ds = generate_procedural_dataset(spec);
  for (std::int64_t i : {0, 5, 11}) {
    int shape = -1, color = -1;
    const auto img = generate_image(spec, i, &shape, &color);
    CHECK(test::bit_equal(img, batch_row(ds.images, i)));
    CHECK(shape == ds.shape_labels[static_cast<std::size_t>(i)]);
    CHECK(color == ds.color_labels[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("invalid specs are configuration errors") {
  DatasetSpec spec;
  spec.num_images = 0;
  CHECK_THROWS_AS(generate_procedural_dataset(spec), ConfigError);
  spec = {};
  spec.num_shape_classes = kMaxShapeClasses + 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.image_size = 48;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("every image has contrast and stays in range") {
  DatasetSpec spec;
  spec.seed = 7;
  spec.num_images = 256;
  const auto ds = generate_procedural_dataset(spec);
  const std::int64_t per = ds.images.dim(1) * ds.images.dim(2) * ds.images.dim(3);
  double min_std = 1e9;
  for (std::int64_t n = 0; n < ds.size(); ++n) {
    double s = 0, s2 = 0;
    for (std::int64_t k = 0; k < per; ++k) {
      const double v = ds.images[static_cast<std::size_t>(n * per + k)];
      REQUIRE(v >= -1.0);
      REQUIRE(v <= 1.0);
      s += v;
      s2 += v * v;
    }
    const double mean = s / static_cast<double>(per);
    min_std = std::min(min_std, std::sqrt(s2 / static_cast<double>(per) - mean * mean));
  }
  CHECK(min_std >= 0.05);
}

TEST_CASE("labels cover the configured classes") {
  DatasetSpec spec;
  spec.num_images = 512;
  spec.num_shape_classes = 4;
  spec.num_color_classes = 3;
  const auto ds = generate_procedural_dataset(spec);
  std::vector<int> shapes(4, 0), colors(3, 0);
  for (int s : ds.shape_labels) ++shapes.at(static_cast<std::size_t>(s));
  for (int c : ds.color_labels) ++colors.at(static_cast<std::size_t>(c));
  for (int k : shapes) CHECK(k > 0);
  for (int k : colors) CHECK(k > 0);
}

TEST_CASE("crop and flip") {
  SUBCASE("full-size crop without flip is the identity") {
    const auto x = ramp(2, 3, 4, 4);
    CHECK(test::bit_equal(crop_flip(x, 4, {0, 0}, {0, 0}, {false, false}), x));
  }
  SUBCASE("forced flip mirrors rows") {
    const auto out = crop_flip(image_2x2(1, 2, 3, 4), 2, {0}, {0}, {true});
    CHECK(test::bit_equal(out, image_2x2(2, 1, 4, 3)));
  }
  SUBCASE("offset (1,1) on 4x4 picks the central block") {
    const auto x = ramp(1, 1, 4, 4);
    const auto out = crop_flip(x, 2, {1}, {1}, {false});
    CHECK(test::bit_equal(out, TensorF({1, 1, 2, 2}, {x[5], x[6], x[9], x[10]})));
  }
  SUBCASE("crop larger than the image is rejected") {
    CHECK_THROWS_AS(crop_flip(ramp(1, 1, 4, 4), 5, {0}, {0}, {false}), ConfigError);
    CHECK_THROWS_AS(crop_flip(ramp(1, 1, 4, 4), 2, {3}, {0}, {false}), ConfigError);
  }
}

TEST_CASE("eval preprocessing is a deterministic center crop") {
  const auto x = ramp(1, 1, 4, 4);
  const auto out = preprocess_eval(x, 2);
  CHECK(test::bit_equal(out, TensorF({1, 1, 2, 2}, {x[5], x[6], x[9], x[10]})));
  CHECK(test::bit_equal(preprocess_eval(x, 4), x));
  CHECK(test::bit_equal(preprocess_eval(x, 2), out));
  // odd slack rounds the offset down
  const auto y = ramp(1, 1, 5, 5);
  CHECK(preprocess_eval(y, 2)[0] == y[6]);
}

TEST_CASE("train augmentation draws crop and flip per image") {
  const auto x = ramp(64, 1, 6, 6);
  Rng a(3, "aug"), b(3, "aug");
  const auto out = augment_train(x, 4, a);
  CHECK(out.shape() == Shape{64, 1, 4, 4});
  CHECK(test::bit_equal(out, augment_train(x, 4, b)));
  // every output row must be some crop/flip of its input row
  for (std::int64_t n = 0; n < 64; ++n) {
    bool found = false;
    for (int oy = 0; oy <= 2 && !found; ++oy)
      for (int ox = 0; ox <= 2 && !found; ++ox)
        for (bool f : {false, true}) {
          auto row = crop_flip(batch_row(x, n).reshaped({1, 1, 6, 6}), 4, {oy}, {ox}, {f});
          if (test::bit_equal(row.reshaped({1, 4, 4}), batch_row(out, n))) found = true;
        }
    CHECK(found);
  }
}

TEST_CASE("pixel mapping endpoints") {
  CHECK(pixel_to_value(0) == -1.0f);
  CHECK(pixel_to_value(255) == 1.0f);
  for (int p = 0; p < 256; ++p) CHECK(value_to_pixel(pixel_to_value(static_cast<std::uint8_t>(p))) == p);
  CHECK(value_to_pixel(-3.0f) == 0);
  CHECK(value_to_pixel(3.0f) == 255);
}

TEST_CASE("PPM round trip is within one quantization step and then stable") {
  DatasetSpec spec;
  spec.num_images = 4;
  const auto ds = generate_procedural_dataset(spec);
  const auto dir = test::scratch_dir("ppm");
  for (std::int64_t n = 0; n < ds.size(); ++n) {
    const auto img = batch_row(ds.images, n);
    const auto p1 = dir / "a.ppm", p2 = dir / "b.ppm";
    write_image_file(p1, img);
    const auto back = read_image_file(p1);
    REQUIRE(back.shape() == img.shape());
    double worst = 0;
    for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(double(back[i]) - img[i]));
    CHECK(worst <= 2.0 / 255.0 * 0.5 + 1e-6);  // half a step in [-1,1] units is 1/255
    write_image_file(p2, back);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(test::bit_equal(read_image_file(p2), back));
  }
}

TEST_CASE("PGM round trip") {
  const auto dir = test::scratch_dir("pgm");
  TensorF g({1, 2, 3}, {-1, -0.5f, 0, 0.25f, 0.5f, 1});
  write_image_file(dir / "g.pgm", g);
  const auto back = read_image_file(dir / "g.pgm");
  REQUIRE(back.shape() == g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(back[i] - g[i]) <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("malformed PNM files are rejected") {
  try {
    decode_pnm("P6\n4 4\n255\n" + std::string(40, '\x10'));
    FAIL("truncated payload accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_pnm("P3\n1 1\n255\n0 0 0\n"), IoError);
  CHECK_THROWS_AS(decode_pnm("P6\n1 1\n65535\n" + std::string(6, '\0')), IoError);
  CHECK_THROWS_AS(decode_pnm("P6\n"), IoError);
  CHECK_NOTHROW(decode_pnm("P6\n# comment\n1 1\n255\n" + std::string(3, '\x7f')));
  CHECK_THROWS_AS(read_image_file("/nonexistent/x.ppm"), IoError);
}

TEST_CASE("write_dataset emits images and a manifest") {
  DatasetSpec spec;
  spec.num_images = 3;
  const auto dir = test::scratch_dir("gen");
  write_dataset(dir, generate_procedural_dataset(spec));
  CHECK(std::filesystem::exists(dir / "manifest.tsv"));
  std::ifstream m(dir / "manifest.tsv");
  int lines = 0;
  for (std::string l; std::getline(m, l);) ++lines;
  CHECK(lines >= 3);
}

}  // TEST_SUITE
