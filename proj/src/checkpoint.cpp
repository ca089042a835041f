// SPDX-License-Identifier: Apache-2.0
#include "dgae/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace dgae {
namespace {

constexpr char kMagic[8] = {'D', 'G', 'A', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeF32 = 1;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void encode_records(const Checkpoint& ckpt, std::string& out) {
  for (const auto& [name, t] : ckpt.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kDtypeF32));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (float v : t.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string_view bytes(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > b_.size() - pos_)
      throw CorruptionError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

void Checkpoint::put(const std::string& prefix, const ModelParams<float>& params) {
  for (const auto& [name, t] : params.entries()) put_tensor(prefix + "/" + name, t);
  auto& tags = metadata["tags"][prefix];
  tags = nlohmann::json::object();
  for (const auto& [k, v] : params.tags) tags[k] = v;
}

ModelParams<float> Checkpoint::get(const std::string& prefix) const {
  ModelParams<float> out;
  const std::string key = prefix + "/";
  for (const auto& [name, t] : tensors)
    if (name.compare(0, key.size(), key) == 0) out.add(name.substr(key.size()), t);
  if (out.size() == 0) throw CorruptionError("checkpoint has no tensors under '" + prefix + "'");
  if (metadata.contains("tags") && metadata["tags"].contains(prefix))
    for (const auto& [k, v] : metadata["tags"][prefix].items()) out.tags[k] = v.get<std::string>();
  return out;
}

bool Checkpoint::has(const std::string& prefix) const {
  const std::string key = prefix + "/";
  for (const auto& e : tensors)
    if (e.first.compare(0, key.size(), key) == 0) return true;
  return false;
}

void Checkpoint::put_tensor(const std::string& name, TensorF t) {
  for (const auto& e : tensors)
    if (e.first == name) throw ShapeError("checkpoint: duplicate tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

const TensorF& Checkpoint::tensor(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.first == name) return e.second;
  throw CorruptionError("checkpoint has no tensor '" + name + "'");
}

std::string Checkpoint::content_hash() const {
  std::string rec;
  encode_records(*this, rec);
  return sha256_hex(rec);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string rec;
  encode_records(ckpt, rec);
  nlohmann::json meta = ckpt.metadata;
  meta["content_hash"] = sha256_hex(rec);
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  put_le<std::uint64_t>(out, ckpt.tensors.size());
  out += rec;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic)))
    throw CorruptionError("not a checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CorruptionError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = r.le<std::uint64_t>("metadata length");
  const std::string_view meta_text = r.bytes(meta_len, "metadata");
  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (!ckpt.metadata.is_object() || !ckpt.metadata.contains("content_hash"))
    throw CorruptionError("checkpoint metadata lacks content_hash");

  const auto count = r.le<std::uint64_t>("tensor count");
  const std::size_t rec_begin = r.pos();
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = r.le<std::uint32_t>("tensor name length");
    std::string name(r.bytes(name_len, "tensor name"));
    if (r.le<std::uint8_t>("dtype") != kDtypeF32) throw CorruptionError("tensor '" + name + "' has unknown dtype");
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank > 8) throw CorruptionError("tensor '" + name + "' has implausible rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.le<std::uint64_t>("dims");
      if (dim > (std::uint64_t{1} << 40) || (dim != 0 && n > (std::uint64_t{1} << 40) / dim))
        throw CorruptionError("tensor '" + name + "' has implausible dimensions");
      n *= dim;
      shape.push_back(static_cast<std::int64_t>(dim));
    }
    const std::string_view payload = r.bytes(n * 4, "tensor payload");
    std::vector<float> data(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
      data[i] = std::bit_cast<float>(u);
    }
    ckpt.tensors.emplace_back(std::move(name), TensorF(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CorruptionError("trailing bytes after last tensor record at byte " + std::to_string(r.pos()));
  const std::string actual = sha256_hex(bytes.substr(rec_begin));
  const std::string stored = ckpt.metadata["content_hash"].get<std::string>();
  if (actual != stored) throw CorruptionError("checkpoint content hash mismatch: stored " + stored + ", computed " + actual);
  ckpt.metadata.erase("content_hash");
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path));
}

}  // namespace dgae
