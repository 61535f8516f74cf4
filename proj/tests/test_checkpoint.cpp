#include "fse/checkpoint.hpp"
#include "fse/image_io.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace fse;

namespace {

CheckpointArchive sample_archive() {
  CheckpointArchive a;
  a.specs()["hello"] = {{"x", 1}, {"y", "two"}};
  a.put("b/weights", torch::arange(12, torch::kFloat32).view({3, 4}) / 7.0);
  a.put("a/bias", torch::tensor({-0.0f, 1e-30f, 3.5f}));
  a.put("c/scalar", torch::tensor(2.0));
  return a;
}

uint64_t header_length(const std::vector<uint8_t>& bytes) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[8 + i]) << (8 * i);
  return v;
}

}  // namespace

TEST(Checkpoint, LayoutHasMagicAndHeader) {
  const auto bytes = sample_archive().serialize();
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::memcmp(bytes.data(), "FSECKPT1", 8), 0);
  const auto len = header_length(bytes);
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<int64_t>(len));
  EXPECT_EQ(header.at("format_version"), 1);
  EXPECT_EQ(header.at("specs").at("hello").at("y"), "two");
  const auto& t = header.at("tensors").at("b/weights");
  EXPECT_EQ(t.at("dtype"), "f32");
  EXPECT_EQ(t.at("shape"), nlohmann::json::array({3, 4}));
  EXPECT_EQ(t.at("byte_length"), 48);
  // Data section is raw little-endian float32, in name order.
  const size_t data = 16 + len;
  const auto off = t.at("byte_offset").get<size_t>();
  float v;
  std::memcpy(&v, bytes.data() + data + off + 4 * 5, 4);
  EXPECT_FLOAT_EQ(v, 5.0f / 7.0f);
  EXPECT_EQ(bytes.size(), data + 12 + 48 + 4);
}

TEST(Checkpoint, SerializeDeserializeIsBitExact) {
  const auto bytes = sample_archive().serialize();
  const auto again = CheckpointArchive::deserialize(bytes).serialize();
  EXPECT_EQ(bytes, again);
}

TEST(Checkpoint, FileRoundTripAndHash) {
  testing_util::TempDir dir("ckpt");
  const auto a = sample_archive();
  a.save(dir / "x.ckpt");
  const auto b = CheckpointArchive::load(dir / "x.ckpt");
  EXPECT_EQ(a.sha256(), b.sha256());
  EXPECT_EQ(read_file(dir / "x.ckpt"), a.serialize());
  EXPECT_TRUE(torch::equal(b.get("a/bias"), a.get("a/bias")));
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ckpt.tmp"));
}

TEST(Checkpoint, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(abc.data(), abc.size()),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = sample_archive().serialize();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(CheckpointArchive::deserialize(bad_magic), IoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(CheckpointArchive::deserialize(truncated), IoError);
  EXPECT_THROW(CheckpointArchive::load("/nonexistent/file.ckpt"), IoError);
}

TEST(Checkpoint, MissingTensorIsAnError) {
  EXPECT_THROW(sample_archive().get("nope"), IoError);
}

TEST(Checkpoint, PrefixListing) {
  const auto names = sample_archive().names_with_prefix("b/");
  ASSERT_EQ(names.size(), 1u);
  EXPECT_EQ(names[0], "b/weights");
}
