#pragma once

#include "fse/data.hpp"
#include "fse/encoder.hpp"
#include "fse/generator.hpp"
#include "fse/objectives.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

namespace fse {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr double kImageRange = 2.0;  // images live in [-1, 1]

// Per-image metrics; every function returns a float64 tensor of shape [B].
torch::Tensor psnr(const ImageTensor& a, const ImageTensor& b);
// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 2, valid region, channel-averaged.
torch::Tensor ssim(const ImageTensor& a, const ImageTensor& b);
torch::Tensor lpips_distance(const ImageTensor& a, const ImageTensor& b, const Embedder& v);
// Cosine similarity of the embedder's final level.
torch::Tensor id_similarity(const ImageTensor& a, const ImageTensor& b, const Embedder& r);
torch::Tensor per_image_mse(const ImageTensor& a, const ImageTensor& b);

// Mean over frames 1..N-1 of <R(x_i), R(x_0)>; needs at least two frames ([N, 3, H, W]).
double identity_consistency(const ImageTensor& frames, const Embedder& r);

// Frechet distance between Gaussian fits of two feature sets ([M, D] each, M >= D + 1).
double fid(const torch::Tensor& real_feats, const torch::Tensor& fake_feats, double ridge = 1e-6);

// Kahan-compensated mean, independent of how the values were produced.
double stable_mean(const std::vector<double>& values);
double stable_mean(const torch::Tensor& values);

struct MetricsReport {
  double mse = 0, psnr_db = 0, ssim = 0, lpips = 0, id_similarity = 0;
  std::optional<double> fid;
  int64_t n_samples = 0;

  static std::string csv_header();
  std::string csv_row(const std::string& label) const;
  friend void to_json(nlohmann::json& j, const MetricsReport& m);
  friend void from_json(const nlohmann::json& j, MetricsReport& m);
};

// Averages of the per-image metrics; FID over the identity embedder's final level when
// there are enough samples for a full-rank covariance.
MetricsReport compute_metrics(const ImageTensor& reconstructions, const ImageTensor& targets,
                              const EmbedderSet& embedders);

struct EvalReport {
  MetricsReport x1;  // G(w)
  MetricsReport x2;  // G(w, F)
  friend void to_json(nlohmann::json& j, const EvalReport& r);
};

EvalReport evaluate(const EncoderImpl& encoder, const GeneratorImpl& generator, const ImageDataset& dataset,
                    const EmbedderSet& embedders, const NoiseBundle& noise, int64_t chunk = 64);

}  // namespace fse
