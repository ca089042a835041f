// SPDX-License-Identifier: Apache-2.0
#include "dgae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dgae {
namespace {

// Background palette, RGB in [0, 1].
constexpr std::array<std::array<double, 3>, kMaxColorClasses> kPalette{{
    {0.10, 0.12, 0.30},
    {0.45, 0.45, 0.15},
    {0.45, 0.12, 0.15},
    {0.10, 0.40, 0.40},
    {0.80, 0.80, 0.78},
    {0.85, 0.75, 0.55},
    {0.12, 0.35, 0.15},
    {0.65, 0.60, 0.85},
}};

constexpr int kSuper = 4;  // supersamples per axis for anti-aliasing
constexpr double kMinPixelStd = 0.05;

double lattice_value(std::uint64_t key, std::int64_t ix, std::int64_t iy, int octave) {
  std::uint64_t h = mix64(key ^ mix64(static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ULL));
  h = mix64(h ^ mix64(static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4FULL + static_cast<std::uint64_t>(octave)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Multi-octave value noise in [0, 1], polynomial interpolation only.
double value_noise(std::uint64_t key, double x, double y, int octaves) {
  double total = 0.0, norm = 0.0, amp = 1.0, freq = 1.0;
  for (int o = 0; o < octaves; ++o) {
    const double fx = x * freq + 17.0 * o, fy = y * freq + 31.0 * o;
    const double x0 = std::floor(fx), y0 = std::floor(fy);
    const auto ix = static_cast<std::int64_t>(x0), iy = static_cast<std::int64_t>(y0);
    const double tx = smoothstep(fx - x0), ty = smoothstep(fy - y0);
    const double v00 = lattice_value(key, ix, iy, o), v10 = lattice_value(key, ix + 1, iy, o);
    const double v01 = lattice_value(key, ix, iy + 1, o), v11 = lattice_value(key, ix + 1, iy + 1, o);
    const double a = v00 + (v10 - v00) * tx;
    const double b = v01 + (v11 - v01) * tx;
    total += amp * (a + (b - a) * ty);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return total / norm;
}

/// Point-in-shape test in units of the shape radius, centered at the origin.
bool inside_shape(int shape, double dx, double dy) {
  switch (shape) {
    case 0:  // disc
      return dx * dx + dy * dy <= 1.0;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.85;
    case 2: {  // triangle, apex up
      if (dy > 0.7) return false;
      // edges from (0,-1) to (+-0.9, 0.7)
      return std::abs(dx) * 1.7 <= 0.9 * (dy + 1.0);
    }
    case 3:  // diamond
      return std::abs(dx) + std::abs(dy) <= 1.0;
    case 4: {  // ring
      const double r2 = dx * dx + dy * dy;
      return r2 <= 1.0 && r2 >= 0.3025;
    }
    case 5:  // plus sign
      return (std::abs(dx) <= 0.34 && std::abs(dy) <= 1.0) || (std::abs(dy) <= 0.34 && std::abs(dx) <= 1.0);
    default:
      return false;
  }
}

double pixel_std(const TensorF& img) {
  double sum = 0, sq = 0;
  for (float v : img.values()) sum += v;
  const double mu = sum / static_cast<double>(img.size());
  for (float v : img.values()) sq += (v - mu) * (v - mu);
  return std::sqrt(sq / static_cast<double>(img.size()));
}

void check_crop(const TensorF& batch, int crop_size) {
  if (batch.rank() != 4) throw ShapeError("image batch must be NCHW, got " + shape_str(batch.shape()));
  if (crop_size < 1 || crop_size > batch.dim(2) || crop_size > batch.dim(3))
    throw ConfigError("crop_size " + std::to_string(crop_size) + " exceeds image size " +
                      std::to_string(batch.dim(2)) + "x" + std::to_string(batch.dim(3)));
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_images <= 0) throw ConfigError("dataset.num_images must be > 0");
  if (image_size != 32 && image_size != 64 && image_size != 128)
    throw ConfigError("dataset.image_size must be one of 32, 64, 128 (got " + std::to_string(image_size) + ")");
  if (num_shape_classes < 1 || num_shape_classes > kMaxShapeClasses)
    throw ConfigError("dataset.num_shape_classes must be in [1, " + std::to_string(kMaxShapeClasses) + "]");
  if (num_color_classes < 1 || num_color_classes > kMaxColorClasses)
    throw ConfigError("dataset.num_color_classes must be in [1, " + std::to_string(kMaxColorClasses) + "]");
  if (texture_octaves < 1 || texture_octaves > 8) throw ConfigError("dataset.texture_octaves must be in [1, 8]");
}

TensorF generate_image(const DatasetSpec& spec, std::int64_t index, int* shape_label, int* color_label) {
  const int s = spec.image_size;
  Rng rng(spec.seed, "image", static_cast<std::uint64_t>(index));
  const int shape = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_shape_classes)));
  const int color = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_color_classes)));
  if (shape_label) *shape_label = shape;
  if (color_label) *color_label = color;
  const auto& bg = kPalette[static_cast<std::size_t>(color)];

  TensorF img(Shape{3, s, s});
  for (int attempt = 0;; ++attempt) {
    const double cx = s * rng.uniform(0.35, 0.65), cy = s * rng.uniform(0.35, 0.65);
    const double radius = s * rng.uniform(0.20, 0.32);
    std::array<double, 3> fill{};
    for (auto& f : fill) f = rng.uniform(0.15, 0.85);
    const std::uint64_t tex_key = rng.next();
    const double cells = 4.0;  // lattice cells across the image at octave 0

    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
            hits += inside_shape(shape, (px - cx) / radius, (py - cy) / radius) ? 1 : 0;
          }
        const double cov = static_cast<double>(hits) / (kSuper * kSuper);
        const double v =
            value_noise(tex_key, (x + 0.5) / s * cells, (y + 0.5) / s * cells, spec.texture_octaves) - 0.5;
        for (int c = 0; c < 3; ++c) {
          const double tex = std::clamp(fill[static_cast<std::size_t>(c)] + 1.1 * v, 0.0, 1.0);
          const double p = cov * tex + (1.0 - cov) * bg[static_cast<std::size_t>(c)];
          img[static_cast<std::size_t>((c * s + y) * s + x)] = static_cast<float>(2.0 * p - 1.0);
        }
      }
    // Re-draw geometry and texture (labels stay) until the detail floor holds.
    if (pixel_std(img) >= kMinPixelStd || attempt >= 64) break;
  }
  return img;
}

Dataset generate_procedural_dataset(const DatasetSpec& spec) {
  spec.validate();
  const std::int64_t n = spec.num_images, s = spec.image_size;
  Dataset ds;
  ds.images = TensorF(Shape{n, 3, s, s});
  ds.shape_labels.resize(static_cast<std::size_t>(n));
  ds.color_labels.resize(static_cast<std::size_t>(n));
  const std::int64_t per = 3 * s * s;
  for (std::int64_t i = 0; i < n; ++i) {
    TensorF img = generate_image(spec, i, &ds.shape_labels[static_cast<std::size_t>(i)],
                                 &ds.color_labels[static_cast<std::size_t>(i)]);
    std::copy(img.values().begin(), img.values().end(), ds.images.data() + i * per);
  }
  return ds;
}

TensorF Dataset::gather(const std::vector<std::int64_t>& indices) const {
  const std::int64_t per = images.dim(1) * images.dim(2) * images.dim(3);
  TensorF out(Shape{static_cast<std::int64_t>(indices.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= size()) throw ShapeError("dataset index out of range");
    std::copy_n(images.data() + indices[k] * per, per, out.data() + static_cast<std::int64_t>(k) * per);
  }
  return out;
}

TensorF batch_row(const TensorF& batch, std::int64_t n) {
  const std::int64_t per = batch.dim(1) * batch.dim(2) * batch.dim(3);
  std::vector<float> v(batch.data() + n * per, batch.data() + (n + 1) * per);
  return TensorF(Shape{batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(v));
}

TensorF crop_flip(const TensorF& batch, int crop_size, const std::vector<int>& off_y, const std::vector<int>& off_x,
                  const std::vector<bool>& flip) {
  check_crop(batch, crop_size);
  const std::int64_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  TensorF out(Shape{n, c, crop_size, crop_size});
  for (std::int64_t i = 0; i < n; ++i) {
    const int oy = off_y[static_cast<std::size_t>(i)], ox = off_x[static_cast<std::size_t>(i)];
    if (oy < 0 || ox < 0 || oy + crop_size > h || ox + crop_size > w) throw ConfigError("crop offset out of range");
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (int y = 0; y < crop_size; ++y)
        for (int x = 0; x < crop_size; ++x) {
          const int sx = flip[static_cast<std::size_t>(i)] ? crop_size - 1 - x : x;
          out.at(i, ch, y, x) = batch.at(i, ch, oy + y, ox + sx);
        }
  }
  return out;
}

TensorF augment_train(const TensorF& batch, int crop_size, Rng& rng) {
  check_crop(batch, crop_size);
  const auto n = static_cast<std::size_t>(batch.dim(0));
  std::vector<int> oy(n), ox(n);
  std::vector<bool> flip(n);
  for (std::size_t i = 0; i < n; ++i) {
    oy[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(batch.dim(2) - crop_size + 1)));
    ox[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(batch.dim(3) - crop_size + 1)));
    flip[i] = rng.bernoulli(0.5);
  }
  return crop_flip(batch, crop_size, oy, ox, flip);
}

TensorF preprocess_eval(const TensorF& batch, int crop_size) {
  check_crop(batch, crop_size);
  const auto n = static_cast<std::size_t>(batch.dim(0));
  std::vector<int> oy(n, static_cast<int>((batch.dim(2) - crop_size) / 2));
  std::vector<int> ox(n, static_cast<int>((batch.dim(3) - crop_size) / 2));
  return crop_flip(batch, crop_size, oy, ox, std::vector<bool>(n, false));
}

std::uint8_t value_to_pixel(float v) {
  const double p = std::round((static_cast<double>(v) + 1.0) * 255.0 / 2.0);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

void write_image_file(const std::filesystem::path& path, const TensorF& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
    throw ShapeError("write_image_file: expected [3,H,W] or [1,H,W], got " + shape_str(image.shape()));
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string bytes = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = bytes.size();
  bytes.resize(header + static_cast<std::size_t>(c * h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch)
        bytes[header + static_cast<std::size_t>((y * w + x) * c + ch)] =
            static_cast<char>(value_to_pixel(image[static_cast<std::size_t>((ch * h + y) * w + x)]));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

TensorF decode_pnm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) -> std::int64_t {
    skip_space();
    const std::size_t start = pos;
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 20)) throw IoError(std::string("malformed header: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw IoError(std::string("malformed header: expected ") + what, start);
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    throw IoError("malformed header: not a binary PPM/PGM file", 0);
  const std::int64_t c = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::int64_t w = read_int("width");
  const std::int64_t h = read_int("height");
  const std::size_t maxval_at = pos;
  const std::int64_t maxval = read_int("maxval");
  if (maxval != 255) throw IoError("unsupported maxval " + std::to_string(maxval), maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError("malformed header: missing separator after maxval", pos);
  ++pos;
  if (w <= 0 || h <= 0) throw IoError("malformed header: empty image", 0);
  const auto need = static_cast<std::size_t>(c * h * w);
  if (bytes.size() - pos < need)
    throw IoError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - pos),
                  bytes.size());
  TensorF out(Shape{c, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch)
        out[static_cast<std::size_t>((ch * h + y) * w + x)] =
            pixel_to_value(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>((y * w + x) * c + ch)]));
  return out;
}

TensorF read_image_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_pnm(ss.str());
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw IoError("cannot write manifest in '" + dir.string() + "'");
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06lld.ppm", static_cast<long long>(i));
    write_image_file(dir / name, batch_row(ds.images, i));
    manifest << i << '\t' << ds.shape_labels[static_cast<std::size_t>(i)] << '\t'
             << ds.color_labels[static_cast<std::size_t>(i)] << '\t' << name << '\n';
  }
}

}  // namespace dgae
