// SPDX-License-Identifier: Apache-2.0
//
// Procedural image dataset, train/eval preprocessing and PPM/PGM I/O.
//
// Images are NCHW float tensors with values in [-1, 1]. Generation is a pure
// function of DatasetSpec: image i draws only from the substream
// (seed, "image", i) and uses exactly-rounded arithmetic, so serial, parallel
// and cross-platform runs produce identical bytes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgae/rng.hpp"
#include "dgae/tensor.hpp"

namespace dgae {

inline constexpr int kMaxShapeClasses = 6;
inline constexpr int kMaxColorClasses = 8;

struct DatasetSpec {
  std::int64_t num_images = 4096;
  int image_size = 32;
  int num_shape_classes = 6;
  int num_color_classes = 6;
  int texture_octaves = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Dataset {
  TensorF images;  // [N, 3, S, S]
  std::vector<int> shape_labels;
  std::vector<int> color_labels;

  std::int64_t size() const { return images.empty() ? 0 : images.dim(0); }
  /// Rows `indices` as a new batch.
  TensorF gather(const std::vector<std::int64_t>& indices) const;
};

Dataset generate_procedural_dataset(const DatasetSpec& spec);

/// Single image i of the dataset, [3, S, S].
TensorF generate_image(const DatasetSpec& spec, std::int64_t index, int* shape_label, int* color_label);

/// Crop an [N,C,H,W] batch at a fixed offset, optionally mirroring left-right.
TensorF crop_flip(const TensorF& batch, int crop_size, const std::vector<int>& off_y, const std::vector<int>& off_x,
                  const std::vector<bool>& flip);

/// Random crop + horizontal flip with probability 0.5, independently per image.
TensorF augment_train(const TensorF& batch, int crop_size, Rng& rng);

/// Center crop at floor((H - crop) / 2), floor((W - crop) / 2).
TensorF preprocess_eval(const TensorF& batch, int crop_size);

/// 8-bit pixel <-> [-1, 1] value mapping.
inline float pixel_to_value(std::uint8_t p) { return 2.0f * static_cast<float>(p) / 255.0f - 1.0f; }
std::uint8_t value_to_pixel(float v);

/// Writes a [3,H,W] tensor as binary PPM (P6) or a [1,H,W] tensor as PGM (P5).
void write_image_file(const std::filesystem::path& path, const TensorF& image);
/// Reads P6 or P5 (maxval 255) into a [C,H,W] tensor.
TensorF read_image_file(const std::filesystem::path& path);
/// Parses an in-memory PPM/PGM file.
TensorF decode_pnm(const std::string& bytes);

/// Writes images/NNNNNN.ppm plus manifest.tsv (index, shape, color, path).
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// Row n of a batch as [C,H,W].
TensorF batch_row(const TensorF& batch, std::int64_t n);

}  // namespace dgae
