#pragma once

#include "fse/generator.hpp"
#include "fse/types.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <array>

namespace fse {

struct EncoderSpec {
  int input_resolution = 32;
  int stem_channels = 32;
  static constexpr int n_blocks = 4;
  std::array<int, 4> block_channels{32, 64, 128, 256};
  int w_dim = 64;
  int n_layers = 7;
  int k_inject = 5;
  // (C, H, W) of the feature code; taken from the paired generator.
  std::array<int64_t, 3> feature_shape{32, 16, 16};
  int feature_branch_convs = 2;

  static EncoderSpec for_generator(const GeneratorSpec& g);
  void validate() const;

  friend void to_json(nlohmann::json& j, const EncoderSpec& s);
  friend void from_json(const nlohmann::json& j, EncoderSpec& s);
};

// Stage i (1-based) is at input_resolution / 2^i.
struct BackboneFeatures {
  std::array<torch::Tensor, 4> stages;
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderSpec spec, uint64_t init_seed = 0);

  const EncoderSpec& spec() const { return spec_; }

  BackboneFeatures backbone(const ImageTensor& image) const;
  // Pooled, concatenated stage features (length = sum of block_channels) for each image.
  torch::Tensor pooled_features(const BackboneFeatures& feats) const;
  LatentWPlus latent_branch(const BackboneFeatures& feats) const;
  FeatureCode feature_branch(const BackboneFeatures& feats) const;
  std::pair<LatentWPlus, FeatureCode> encode(const ImageTensor& image) const;

  // Sets every latent head's bias to `mean_w` so untrained codes start near the generator's mean w.
  void init_latent_bias(const torch::Tensor& mean_w);

  // Direct access for initialisation tests.
  torch::Tensor& head_weight(int layer) { return head_weights_[layer - 1]; }
  torch::Tensor& head_bias(int layer) { return head_biases_[layer - 1]; }

 private:
  struct ResStage {
    torch::Tensor conv1_w, conv1_b, conv2_w, conv2_b, skip_w;
  };

  EncoderSpec spec_;
  torch::Tensor stem_w_, stem_b_;
  std::vector<ResStage> stages_;
  std::vector<torch::Tensor> head_weights_, head_biases_;
  std::vector<torch::Tensor> fb_weights_, fb_biases_;
};
TORCH_MODULE(Encoder);

}  // namespace fse
