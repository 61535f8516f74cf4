#pragma once

#include <torch/torch.h>

#include <stdexcept>
#include <string>
#include <vector>

namespace fse {

// Invalid specs, missing components, inconsistent flags.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int layer)
      : std::runtime_error(what), layer_(layer) {}
  // 1-based generator layer (or training step) where the non-finite value appeared.
  int layer() const { return layer_; }

 private:
  int layer_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All value types below carry a leading batch dimension B; a single image is B == 1.

// z in Z: [B, z_dim].
struct LatentZ {
  torch::Tensor values;
};

// w in W+: [B, N, w_dim], one style block per conv layer.
struct LatentWPlus {
  torch::Tensor blocks;

  int64_t batch() const { return blocks.size(0); }
  int64_t n_layers() const { return blocks.size(1); }
  // Block l (1-based) for the whole batch: [B, w_dim].
  torch::Tensor block(int l) const { return blocks.select(1, l - 1); }
};

// One single-channel map per layer, map l at layer l's resolution: [B, 1, H_l, W_l].
struct NoiseBundle {
  std::vector<torch::Tensor> maps;

  NoiseBundle select_rows(const std::vector<int64_t>& rows) const;
  static NoiseBundle cat(const std::vector<NoiseBundle>& parts);
};

// F: replaces the input feature maps of conv layer K, [B, C, H, W].
struct FeatureCode {
  torch::Tensor tensor;
};

// Images live in [-1, 1]: [B, 3, H, W].
struct ImageTensor {
  torch::Tensor tensor;
};

struct SynthesisTrace {
  // layer_inputs[l - 1] is the tensor entering conv layer l, before any upsample of that layer.
  std::vector<torch::Tensor> layer_inputs;
  NoiseBundle noise_used;
  ImageTensor image;
};

struct InversionResult {
  LatentWPlus w;
  FeatureCode feature;
  ImageTensor x1;  // G(w)
  ImageTensor x2;  // G(w, F)
};

}  // namespace fse
