#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fse {

// Single-file archive shared by every stage of the pipeline.
//
//   "FSECKPT1" | u64 LE header length | UTF-8 JSON header | raw f32 LE row-major tensor data
//
// Header: {"format_version": 1, "specs": {...}, "tensors": {name: {dtype, shape, byte_offset,
// byte_length}}}. Offsets are relative to the start of the data section; tensors are laid
// out in name order. Loading then saving reproduces the input bytes exactly.
class CheckpointArchive {
 public:
  static constexpr char kMagic[9] = "FSECKPT1";
  static constexpr int kFormatVersion = 1;

  nlohmann::json& specs() { return specs_; }
  const nlohmann::json& specs() const { return specs_; }

  // Stores a detached float32 copy.
  void put(const std::string& name, const torch::Tensor& t);
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const torch::Tensor& get(const std::string& name) const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  const std::map<std::string, torch::Tensor>& tensors() const { return tensors_; }

  std::vector<uint8_t> serialize() const;
  static CheckpointArchive deserialize(const std::vector<uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static CheckpointArchive load(const std::filesystem::path& path);

  // Hex SHA-256 of serialize().
  std::string sha256() const;

 private:
  nlohmann::json specs_ = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors_;
};

// Parameters and buffers of `module` under `prefix` (e.g. "encoder/").
void store_module(CheckpointArchive& archive, const std::string& prefix, const torch::nn::Module& module);
// Copies stored values into the module in place; every parameter must be present.
void load_module(const CheckpointArchive& archive, const std::string& prefix, torch::nn::Module& module);

// Hex SHA-256 over all parameter bytes (name order), for frozen-parameter checks.
std::string parameter_hash(const torch::nn::Module& module);

std::string sha256_hex(const void* data, size_t size);

}  // namespace fse
