#include "fse/checkpoint.hpp"

#include "fse/types.hpp"

#include <sodium.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fse {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

torch::Tensor to_f32(const torch::Tensor& t) {
  return t.detach().to(torch::kCPU, torch::kFloat32).contiguous().clone();
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t read_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void CheckpointArchive::put(const std::string& name, const torch::Tensor& t) {
  tensors_[name] = to_f32(t);
}

const torch::Tensor& CheckpointArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IoError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> CheckpointArchive::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = tensors_.lower_bound(prefix); it != tensors_.end() && it->first.starts_with(prefix); ++it) {
    out.push_back(it->first);
  }
  return out;
}

std::vector<uint8_t> CheckpointArchive::serialize() const {
  nlohmann::json index = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const uint64_t len = static_cast<uint64_t>(t.numel()) * sizeof(float);
    index[name] = {{"dtype", "f32"}, {"shape", t.sizes().vec()}, {"byte_offset", offset}, {"byte_length", len}};
    offset += len;
  }
  const nlohmann::json header = {{"format_version", kFormatVersion}, {"specs", specs_}, {"tensors", index}};
  const std::string text = header.dump();

  std::vector<uint8_t> out;
  out.reserve(8 + 8 + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 8);
  append_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : tensors_) {
    const auto* p = reinterpret_cast<const uint8_t*>(t.data_ptr<float>());
    out.insert(out.end(), p, p + t.numel() * sizeof(float));
  }
  return out;
}

CheckpointArchive CheckpointArchive::deserialize(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("not a checkpoint archive (bad magic)");
  }
  const uint64_t hlen = read_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw IoError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<int64_t>(hlen));
  if (header.value("format_version", 0) != kFormatVersion) throw IoError("unsupported checkpoint format_version");

  CheckpointArchive a;
  a.specs_ = header.value("specs", nlohmann::json::object());
  const size_t data_start = 16 + hlen;
  for (const auto& [name, entry] : header.at("tensors").items()) {
    if (entry.at("dtype") != "f32") throw IoError("unsupported dtype for tensor '" + name + "'");
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const uint64_t off = entry.at("byte_offset");
    const uint64_t len = entry.at("byte_length");
    if (data_start + off + len > bytes.size()) throw IoError("tensor '" + name + "' exceeds archive size");
    auto t = torch::empty(shape, torch::kFloat32);
    if (static_cast<uint64_t>(t.numel()) * sizeof(float) != len) {
      throw IoError("tensor '" + name + "' byte_length does not match its shape");
    }
    std::memcpy(t.data_ptr<float>(), bytes.data() + data_start + off, len);
    a.tensors_[name] = t;
  }
  return a;
}

void CheckpointArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

CheckpointArchive CheckpointArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string CheckpointArchive::sha256() const {
  const auto bytes = serialize();
  return sha256_hex(bytes.data(), bytes.size());
}

void store_module(CheckpointArchive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(/*recurse=*/true)) archive.put(prefix + p.key(), p.value());
  for (const auto& b : module.named_buffers(/*recurse=*/true)) archive.put(prefix + b.key(), b.value());
}

void load_module(const CheckpointArchive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy_in = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = archive.get(prefix + key);
    if (src.sizes() != dst.sizes()) throw IoError("shape mismatch for '" + prefix + key + "'");
    dst.copy_(src.to(dst.dtype()));
  };
  for (auto& p : module.named_parameters(true)) copy_in(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy_in(b.key(), b.value());
}

std::string parameter_hash(const torch::nn::Module& module) {
  CheckpointArchive a;
  store_module(a, "", module);
  return a.sha256();
}

std::string sha256_hex(const void* data, size_t size) {
  if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
  unsigned char digest[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(digest, static_cast<const unsigned char*>(data), size);
  char hex[crypto_hash_sha256_BYTES * 2 + 1];
  sodium_bin2hex(hex, sizeof(hex), digest, sizeof(digest));
  return hex;
}

}  // namespace fse
