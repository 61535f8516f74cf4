#include "fse/encoder.hpp"

#include "fse/rng.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace fse {

EncoderSpec EncoderSpec::for_generator(const GeneratorSpec& g) {
  EncoderSpec s;
  s.input_resolution = g.output_resolution;
  s.w_dim = g.w_dim;
  s.n_layers = g.n_layers();
  s.k_inject = g.k_inject;
  s.feature_shape = g.feature_shape();
  return s;
}

void EncoderSpec::validate() const {
  if (input_resolution < 16 || (input_resolution & (input_resolution - 1)) != 0) {
    throw ConfigError("encoder input_resolution must be a power of two >= 16");
  }
  if (stem_channels <= 0 || feature_branch_convs < 1 || w_dim <= 0 || n_layers <= 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  for (int c : block_channels) {
    if (c <= 0) throw ConfigError("encoder block_channels must be positive");
  }
}

void to_json(nlohmann::json& j, const EncoderSpec& s) {
  j = nlohmann::json{{"input_resolution", s.input_resolution},
                     {"stem_channels", s.stem_channels},
                     {"n_blocks", EncoderSpec::n_blocks},
                     {"block_channels", s.block_channels},
                     {"w_dim", s.w_dim},
                     {"n_layers", s.n_layers},
                     {"k_inject", s.k_inject},
                     {"feature_shape", s.feature_shape},
                     {"feature_branch_convs", s.feature_branch_convs}};
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
  EncoderSpec d;
  s.input_resolution = j.value("input_resolution", d.input_resolution);
  s.stem_channels = j.value("stem_channels", d.stem_channels);
  s.block_channels = j.value("block_channels", d.block_channels);
  s.w_dim = j.value("w_dim", d.w_dim);
  s.n_layers = j.value("n_layers", d.n_layers);
  s.k_inject = j.value("k_inject", d.k_inject);
  s.feature_shape = j.value("feature_shape", d.feature_shape);
  s.feature_branch_convs = j.value("feature_branch_convs", d.feature_branch_convs);
}

EncoderImpl::EncoderImpl(EncoderSpec spec, uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  auto rng = make_rng(derive_seed(init_seed, {0xe4c0}));
  auto conv = [&](int out, int in, int k) {
    return torch::randn({out, in, k, k}, rng) * std::sqrt(2.0 / (in * k * k));
  };

  stem_w_ = register_parameter("stem_w", conv(spec_.stem_channels, 3, 3));
  stem_b_ = register_parameter("stem_b", torch::zeros({spec_.stem_channels}));

  int in = spec_.stem_channels;
  for (int i = 0; i < EncoderSpec::n_blocks; ++i) {
    const int out = spec_.block_channels[i];
    const std::string p = "stage" + std::to_string(i + 1) + "_";
    ResStage s;
    s.conv1_w = register_parameter(p + "conv1_w", conv(out, in, 3));
    s.conv1_b = register_parameter(p + "conv1_b", torch::zeros({out}));
    s.conv2_w = register_parameter(p + "conv2_w", conv(out, out, 3) * 0.5);
    s.conv2_b = register_parameter(p + "conv2_b", torch::zeros({out}));
    s.skip_w = register_parameter(p + "skip_w", conv(out, in, 1) * 0.5);
    stages_.push_back(std::move(s));
    in = out;
  }

  const int pooled = std::accumulate(spec_.block_channels.begin(), spec_.block_channels.end(), 0);
  for (int l = 1; l <= spec_.n_layers; ++l) {
    head_weights_.push_back(register_parameter(
        "head" + std::to_string(l) + "_w", torch::randn({spec_.w_dim, pooled}, rng) * (0.1 / std::sqrt(pooled))));
    head_biases_.push_back(register_parameter("head" + std::to_string(l) + "_b", torch::zeros({spec_.w_dim})));
  }

  const int fc = static_cast<int>(spec_.feature_shape[0]);
  int fin = spec_.block_channels[2];
  for (int i = 0; i < spec_.feature_branch_convs; ++i) {
    fb_weights_.push_back(register_parameter("fbranch" + std::to_string(i) + "_w", conv(fc, fin, 3)));
    fb_biases_.push_back(register_parameter("fbranch" + std::to_string(i) + "_b", torch::zeros({fc})));
    fin = fc;
  }
}

BackboneFeatures EncoderImpl::backbone(const ImageTensor& image) const {
  const auto& x = image.tensor;
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != spec_.input_resolution ||
      x.size(3) != spec_.input_resolution) {
    throw ShapeError("encoder expects images of shape [B, 3, " + std::to_string(spec_.input_resolution) +
                     ", " + std::to_string(spec_.input_resolution) + "]");
  }
  auto h = torch::leaky_relu(torch::conv2d(x.to(stem_w_.dtype()), stem_w_, stem_b_, 1, 1), 0.2);
  BackboneFeatures f;
  for (int i = 0; i < EncoderSpec::n_blocks; ++i) {
    const auto& s = stages_[i];
    auto main = torch::leaky_relu(torch::conv2d(h, s.conv1_w, s.conv1_b, 2, 1), 0.2);
    main = torch::conv2d(main, s.conv2_w, s.conv2_b, 1, 1);
    auto skip = torch::conv2d(torch::avg_pool2d(h, 2), s.skip_w);
    h = torch::leaky_relu(main + skip, 0.2);
    f.stages[i] = h;
  }
  return f;
}

torch::Tensor EncoderImpl::pooled_features(const BackboneFeatures& feats) const {
  std::vector<torch::Tensor> pooled;
  for (const auto& s : feats.stages) pooled.push_back(s.mean({2, 3}));
  return torch::cat(pooled, 1);
}

LatentWPlus EncoderImpl::latent_branch(const BackboneFeatures& feats) const {
  const auto v = pooled_features(feats);
  std::vector<torch::Tensor> blocks;
  for (int l = 0; l < spec_.n_layers; ++l) {
    blocks.push_back(torch::nn::functional::linear(v, head_weights_[l], head_biases_[l]));
  }
  return {torch::stack(blocks, 1)};
}

FeatureCode EncoderImpl::feature_branch(const BackboneFeatures& feats) const {
  auto h = feats.stages[2];
  for (size_t i = 0; i < fb_weights_.size(); ++i) {
    h = torch::conv2d(h, fb_weights_[i], fb_biases_[i], 1, 1);
    if (i + 1 < fb_weights_.size()) h = torch::leaky_relu(h, 0.2);
  }
  const int64_t th = spec_.feature_shape[1], tw = spec_.feature_shape[2];
  if (h.size(2) != th || h.size(3) != tw) {
    h = torch::nn::functional::interpolate(h, torch::nn::functional::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{th, tw})
                                                  .mode(torch::kBilinear)
                                                  .align_corners(false));
  }
  return {h};
}

std::pair<LatentWPlus, FeatureCode> EncoderImpl::encode(const ImageTensor& image) const {
  const auto feats = backbone(image);
  return {latent_branch(feats), feature_branch(feats)};
}

void EncoderImpl::init_latent_bias(const torch::Tensor& mean_w) {
  torch::NoGradGuard no_grad;
  if (mean_w.numel() != spec_.w_dim) throw ShapeError("mean_w must have length w_dim");
  for (auto& b : head_biases_) b.copy_(mean_w.reshape({-1}).to(b.dtype()));
}

}  // namespace fse
