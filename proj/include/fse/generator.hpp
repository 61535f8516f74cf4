#pragma once

#include "fse/types.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

namespace fse {

// Shape rules for the miniature style-based generator.
//
// Layer l (1-based) runs at 4x4 for l == 1 and at 4 * 2^(l/2) otherwise; even layers
// upsample x2 before their conv. Channels halve per resolution doubling, floored at
// min_channels. N = 1 + 2 * log2(output_resolution / 4).
struct GeneratorSpec {
  int z_dim = 64;
  int w_dim = 64;
  int base_resolution = 4;
  int output_resolution = 32;
  int base_channels = 128;
  int min_channels = 32;
  int mapping_layers = 4;
  int k_inject = 5;
  bool noise_enabled = true;

  int n_layers() const;
  int layer_resolution(int layer) const;
  int layer_out_channels(int layer) const;
  int layer_in_channels(int layer) const;
  bool layer_upsamples(int layer) const { return layer >= 2 && layer % 2 == 0; }
  // (C, H, W) of the tensor entering conv layer k; defaults to k_inject.
  std::array<int64_t, 3> feature_shape(int k = 0) const;

  void validate() const;
  GeneratorSpec with_k(int k) const;

  friend void to_json(nlohmann::json& j, const GeneratorSpec& s);
  friend void from_json(const nlohmann::json& j, GeneratorSpec& s);
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorSpec spec, uint64_t init_seed = 0);

  const GeneratorSpec& spec() const { return spec_; }
  // Changing K does not touch parameters: it only moves the injection point.
  void set_k_inject(int k);

  // z [B, z_dim] -> w [B, w_dim].
  torch::Tensor map_latent(const LatentZ& z) const;
  LatentWPlus broadcast_w(const torch::Tensor& w) const;

  ImageTensor synthesize(const LatentWPlus& w, const NoiseBundle& noise) const;
  SynthesisTrace synthesize_traced(const LatentWPlus& w, const NoiseBundle& noise) const;
  // G^K(w): runs layers 1..K-1 only.
  FeatureCode extract_features_at_k(const LatentWPlus& w, const NoiseBundle& noise) const;
  // Layers K..N starting from F; style blocks 1..K-1 are never read.
  ImageTensor synthesize_with_feature(const LatentWPlus& w, const FeatureCode& feature,
                                      const NoiseBundle& noise) const;

  // Per layer: the (out_channels, w_dim) affine producing the modulation scales.
  std::vector<torch::Tensor> style_affine_weights() const;

  NoiseBundle random_noise(int64_t batch, uint64_t seed) const;
  NoiseBundle zero_noise(int64_t batch) const;
  LatentZ random_z(int64_t batch, uint64_t seed) const;
  // Mean of map_latent over `samples` draws of z.
  torch::Tensor mean_w(int64_t samples, uint64_t seed) const;

 private:
  struct StyleLayer {
    torch::Tensor conv_weight, conv_bias;
    torch::Tensor gamma_weight, gamma_bias;
    torch::Tensor beta_weight, beta_bias;
    torch::Tensor noise_strength;
    bool upsample = false;
  };

  torch::Tensor run_layer(int layer, const torch::Tensor& x, const LatentWPlus& w,
                          const NoiseBundle& noise) const;
  torch::Tensor to_rgb(const torch::Tensor& x) const;
  void check_w(const LatentWPlus& w) const;
  void check_noise(const NoiseBundle& noise, int64_t batch) const;

  GeneratorSpec spec_;
  std::vector<torch::Tensor> mapping_weights_, mapping_biases_;
  torch::Tensor const_input_;
  std::vector<StyleLayer> layers_;
  torch::Tensor rgb_weight_, rgb_bias_;
};
TORCH_MODULE(Generator);

}  // namespace fse
