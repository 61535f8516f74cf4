#pragma once

#include "fse/checkpoint.hpp"
#include "fse/data.hpp"
#include "fse/generator.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <functional>
#include <vector>

namespace fse {

// Small conv discriminator: 1x1 from-RGB, then (3x3 conv, 3x3 conv, 2x2 avg-pool) down to
// 4x4, then two linear layers to one logit per image.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(int resolution, int base_channels, uint64_t init_seed = 0);
  torch::Tensor forward(const torch::Tensor& images) const;  // [B] logits
  int resolution() const { return resolution_; }
  int base_channels() const { return base_channels_; }

 private:
  int resolution_, base_channels_;
  torch::Tensor rgb_w_, rgb_b_;
  std::vector<torch::Tensor> conv_w_, conv_b_;
  torch::Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};
TORCH_MODULE(Discriminator);

// Non-saturating logistic GAN loss with lazy R1 penalty on reals.
struct GanConfig {
  GeneratorSpec generator;
  int steps = 5000;
  int batch_size = 8;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double r1_gamma = 1.0;
  int r1_every = 4;
  int d_channels = 16;
  uint64_t seed = 0;
  int log_every = 100;

  void validate() const;
  friend void to_json(nlohmann::json& j, const GanConfig& c);
  friend void from_json(const nlohmann::json& j, GanConfig& c);
};

struct GanResult {
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  std::vector<nlohmann::json> log;  // one entry per logged step: {step, loss_d, loss_g, r1}
  CheckpointArchive archive;
};

GanResult pretrain_generator(const GanConfig& config, const ImageDataset& data,
                             const std::function<void(const nlohmann::json&)>& on_log = {});

// Fraction of images the discriminator labels real (logit > 0).
double discriminator_accuracy(const DiscriminatorImpl& d, const torch::Tensor& images);

}  // namespace fse
