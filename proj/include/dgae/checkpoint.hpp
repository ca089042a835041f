// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container:
//
//   "DGAECKPT"                      8-byte magic
//   u32 version                     currently 1
//   u64 n, n bytes                  UTF-8 JSON metadata (sorted keys, compact)
//   u64 count                       tensor records follow
//   record: u32 name_len, name, u8 dtype (1 = f32), u32 rank, rank x u64 dims,
//           little-endian f32 payload
//
// metadata["content_hash"] is the SHA-256 of all tensor record bytes and is
// checked on load. Integers are little-endian throughout.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dgae/params.hpp"
#include "dgae/tensor.hpp"

namespace dgae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, TensorF>> tensors;

  /// Adds every entry as "<prefix>/<name>" and records its tags under metadata["tags"][prefix].
  void put(const std::string& prefix, const ModelParams<float>& params);
  ModelParams<float> get(const std::string& prefix) const;
  bool has(const std::string& prefix) const;
  void put_tensor(const std::string& name, TensorF t);
  const TensorF& tensor(const std::string& name) const;

  /// SHA-256 over the encoded tensor records.
  std::string content_hash() const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws CorruptionError on bad magic, version, truncation or hash mismatch.
Checkpoint decode_checkpoint(std::string_view bytes);

/// Atomic: writes "<path>.tmp" then renames over path.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes text to path atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace dgae
