// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include "doctest.h"
#include "dgae/checkpoint.hpp"
#include "dgae/csv.hpp"
#include "support.hpp"

using namespace dgae;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.metadata["format"] = "test";
  c.metadata["step"] = 42;
  ModelParams<float> p;
  p.add("conv.weight", test::random_tensor<float>({4, 3, 3, 3}, 1));
  p.add("conv.bias", test::random_tensor<float>({4}, 2));
  p.tags["trained"] = "true";
  c.put("net", p);
  TensorF special({5}, {0.0f, -0.0f, 1e-38f, -3.5f, 65504.0f});
  c.put_tensor("extra/special", special);
  return c;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("SHA-256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto dir = test::scratch_dir("ckpt");
  const auto c = sample_checkpoint();
  save_checkpoint(c, dir / "a.bin");
  const auto back = load_checkpoint(dir / "a.bin");
  REQUIRE(back.tensors.size() == c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == c.tensors[i].first);
    CHECK(test::bit_equal(back.tensors[i].second, c.tensors[i].second));
  }
  CHECK(back.metadata["step"] == 42);
  const auto p = back.get("net");
  CHECK(p.tags.at("trained") == "true");
  CHECK(p.at("conv.bias").shape() == Shape{4});
  CHECK(back.has("net"));
  CHECK_FALSE(back.has("other"));
  // save -> load -> save yields the same bytes
  save_checkpoint(back, dir / "b.bin");
  CHECK(read_file(dir / "a.bin") == read_file(dir / "b.bin"));
  CHECK(sha256_file(dir / "a.bin") == sha256_file(dir / "b.bin"));
  CHECK_FALSE(std::filesystem::exists(dir / "a.bin.tmp"));
}

TEST_CASE("truncated checkpoints are corruption errors at every length") {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t len = 0; len < bytes.size(); len += (len < 64 ? 1 : 37))
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, len)), CorruptionError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CorruptionError);
  CHECK_NOTHROW(decode_checkpoint(bytes));
}

TEST_CASE("a flipped payload bit fails the hash check") {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  // flip one bit inside the last tensor's payload
  std::string bad = bytes;
  bad[bad.size() - 3] = static_cast<char>(bad[bad.size() - 3] ^ 0x10);
  try {
    decode_checkpoint(bad);
    FAIL("expected CorruptionError");
  } catch (const CorruptionError& e) {
    CHECK(std::string(e.what()).find("hash") != std::string::npos);
  }
}

TEST_CASE("bad magic and version") {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), CorruptionError);
  std::string version = bytes;
  version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(version), CorruptionError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
}

TEST_CASE("content hash covers tensors only") {
  auto a = sample_checkpoint();
  auto b = sample_checkpoint();
  b.metadata["note"] = "different";
  CHECK(a.content_hash() == b.content_hash());
  b.tensors[0].second[0] += 1.0f;
  CHECK(a.content_hash() != b.content_hash());
}

TEST_CASE("schema-versioned CSV") {
  const auto dir = test::scratch_dir("csv");
  const auto path = dir / "t.csv";
  csv_ensure(path, "demo/1", "a,b");
  csv_append(path, "1,x");
  csv_ensure(path, "demo/1", "a,b");  // reopening keeps rows
  csv_append(path, "2,y");
  const auto t = csv_read(path, "demo/1");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][t.column("b")] == "y");
  CHECK_THROWS_AS(t.column("c"), IoError);
  CHECK_THROWS_AS(csv_read(path, "demo/2"), IoError);
  CHECK_THROWS_AS(csv_ensure(path, "demo/2", "a,b"), IoError);
  CHECK_THROWS_AS(csv_ensure(path, "demo/1", "a,c"), IoError);
  csv_filter(path, "demo/1", [](const std::vector<std::string>& r) { return r[0] == "2"; });
  CHECK(csv_read(path, "demo/1").rows.size() == 1);

  CHECK(csv_split("1,,x") == std::vector<std::string>{"1", "", "x"});
  CHECK(csv_number(0.1) == "0.1");
  CHECK(std::stod(csv_number(1.0 / 3.0)) == 1.0 / 3.0);
}

}  // TEST_SUITE
