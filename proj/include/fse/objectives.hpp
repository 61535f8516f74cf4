#pragma once

#include "fse/types.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <memory>
#include <optional>
#include <vector>

namespace fse {

// Multi-level feature extractor standing in for V (perceptual), R (identity) and P (parsing).
// levels() returns level_count() tensors of shape [B, D_l], each row of unit L2 norm.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<torch::Tensor> levels(const ImageTensor& image) const = 0;
  virtual int level_count() const = 0;
};

enum class EmbedderPooling {
  Global,   // each stage averaged over space, then L2-normalised
  Spatial,  // per-pixel channel normalisation, flattened and scaled by 1/sqrt(HW)
};

// Frozen random-weight strided conv net (3x3 stride-2 convs, SiLU). Weights depend only on
// the seed, so outputs are reproducible across processes. Works in the input's dtype.
class DeskEmbedder final : public Embedder {
 public:
  DeskEmbedder(uint64_t seed, int levels, EmbedderPooling pooling);

  std::vector<torch::Tensor> levels(const ImageTensor& image) const override;
  int level_count() const override { return static_cast<int>(weights_.size()); }

 private:
  EmbedderPooling pooling_;
  std::vector<torch::Tensor> weights_, biases_;  // float64 masters
};

std::shared_ptr<const Embedder> desk_embedder(uint64_t seed, int levels,
                                              EmbedderPooling pooling = EmbedderPooling::Global);

// Fixed seeds used project-wide for the three stand-in networks.
struct EmbedderSet {
  std::shared_ptr<const Embedder> perceptual;  // V
  std::shared_ptr<const Embedder> identity;    // R
  std::shared_ptr<const Embedder> parsing;     // P

  static EmbedderSet desk_default();
};

struct LossWeights {
  double lambda1 = 0.2;   // multi-scale perceptual
  double lambda2 = 0.01;  // feature reconstruction
  double lambda3 = 0.1;   // identity
  double lambda4 = 0.1;   // parsing
  bool mse_on_real = false;
  bool face_mode = false;
  int lpips_scales = 3;  // i = 0 .. lpips_scales-1

  void validate() const;
  friend void to_json(nlohmann::json& j, const LossWeights& w);
  friend void from_json(const nlohmann::json& j, LossWeights& w);
};

// Scalar loss components. Terms that are disabled stay 0.
struct LossReport {
  double mse = 0, m_lpips_x1 = 0, m_lpips_x2 = 0, f_recon = 0;
  double id_x1 = 0, id_x2 = 0, parse_x1 = 0, parse_x2 = 0;
  double total = 0;

  friend void to_json(nlohmann::json& j, const LossReport& r);
};

// Differentiable counterpart of LossReport; undefined tensors mean "term disabled".
struct LossTerms {
  torch::Tensor mse, m_lpips_x1, m_lpips_x2, f_recon, id_x1, id_x2, parse_x1, parse_x2;
};

// Mean over all elements of (a - b)^2.
torch::Tensor mse_loss(const ImageTensor& reconstruction, const ImageTensor& target);
// i rounds of non-overlapping 2x2 average pooling.
ImageTensor downsample(const ImageTensor& x, int i);
// Per-sample sum over scales of ||V(down_i(a)) - V(down_i(b))||_2 on the concatenated levels: [B].
torch::Tensor multiscale_lpips(const ImageTensor& reconstruction, const ImageTensor& target, const Embedder& v,
                               int scales = 3);
// Mean over all elements of (F - G^K(w))^2.
torch::Tensor feature_recon_loss(const FeatureCode& f, const FeatureCode& gk);
// Per-sample sum over levels of (1 - <E_l(a), E_l(b)>): [B]. Requires exactly 5 levels.
torch::Tensor multilayer_cosine_loss(const ImageTensor& reconstruction, const ImageTensor& target, const Embedder& e);

// Weighted sum of the enabled terms (tensor, for backprop).
torch::Tensor weighted_total(const LossTerms& terms, const LossWeights& weights);
LossReport make_report(const LossTerms& terms, const LossWeights& weights);

// Everything the loss needs from one dual-inversion forward pass over a batch.
struct BatchOutputs {
  ImageTensor target;                // x
  ImageTensor x1;                    // G(w)
  std::optional<ImageTensor> x2;     // G(w, F); absent without the feature branch
  std::optional<FeatureCode> feature;
  std::optional<FeatureCode> gk;     // G^K(w)
  std::vector<bool> is_synthetic;    // one flag per batch row
};

// Builds every term for a batch; mean over the relevant rows.
LossTerms compute_loss_terms(const BatchOutputs& out, const LossWeights& weights, const EmbedderSet& embedders);

}  // namespace fse
