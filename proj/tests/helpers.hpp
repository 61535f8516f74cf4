#pragma once

#include "fse/checkpoint.hpp"
#include "fse/generator.hpp"
#include "fse/model.hpp"
#include "fse/rng.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>

namespace testing_util {

// Small enough that a forward pass takes a millisecond or two.
inline fse::GeneratorSpec tiny_spec(int resolution = 16, int k = 3) {
  fse::GeneratorSpec s;
  s.z_dim = 8;
  s.w_dim = 8;
  s.output_resolution = resolution;
  s.base_channels = 16;
  s.min_channels = 8;
  s.mapping_layers = 2;
  s.k_inject = k;
  return s;
}

// A random but valid spec: resolution 8..32, K anywhere in 2..N, noise on or off.
inline fse::GeneratorSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> res_pick(3, 5), dim_pick(2, 6), ch_pick(2, 4);
  fse::GeneratorSpec s;
  s.output_resolution = 1 << res_pick(rng);
  s.w_dim = 2 * dim_pick(rng);
  s.z_dim = s.w_dim;
  s.base_channels = 4 << ch_pick(rng);
  s.min_channels = 4;
  s.mapping_layers = 1 + static_cast<int>(rng() % 3);
  s.noise_enabled = rng() % 4 != 0;
  s.k_inject = 2 + static_cast<int>(rng() % static_cast<uint64_t>(s.n_layers() - 1));
  return s;
}

inline fse::LatentWPlus random_w(const fse::GeneratorSpec& s, int64_t batch, uint64_t seed) {
  auto gen = fse::make_rng(seed);
  return {torch::randn({batch, s.n_layers(), s.w_dim}, gen)};
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

// Untrained generator + encoder + pinned noise, as a trainer would save them.
inline fse::CheckpointArchive tiny_model_archive(int resolution = 16, int k = 3, uint64_t seed = 1) {
  fse::Generator g(tiny_spec(resolution, k), seed);
  fse::Encoder e(fse::EncoderSpec::for_generator(g->spec()), seed + 1);
  e->init_latent_bias(g->mean_w(1000, seed));
  fse::CheckpointArchive a;
  fse::store_generator(a, *g);
  fse::store_encoder(a, *e);
  fse::store_eval_noise(a, g->random_noise(1, fse::kEvalNoiseSeed));
  return a;
}

// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fse_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_util
