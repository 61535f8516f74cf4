#pragma once

#include "fse/generator.hpp"
#include "fse/types.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <string>
#include <vector>

namespace fse {

inline constexpr double kMaxEditStrength = 5.0;  // alpha in [-5, 5]

// A direction in W+. per_block is [N, w_dim], zero outside [block_lo, block_hi] (1-based,
// inclusive); the nonzero part has unit L2 norm. Held in float64, serialized as float32.
struct EditDirection {
  std::string name;
  std::string source;  // closed_form | boundary | manual
  int block_lo = 1;
  int block_hi = 1;
  torch::Tensor per_block;
  nlohmann::json metadata = nlohmann::json::object();

  // Broadcasts `v` [w_dim] over the block range, scaled so the concatenation has unit norm.
  static EditDirection uniform(std::string name, std::string source, int n_layers, int lo, int hi,
                               const torch::Tensor& v);
  void validate() const;

  // per_block travels as base64 of little-endian float32.
  friend void to_json(nlohmann::json& j, const EditDirection& d);
  friend void from_json(const nlohmann::json& j, EditDirection& d);
};

std::vector<EditDirection> load_directions(const nlohmann::json& j);
nlohmann::json directions_to_json(const std::vector<EditDirection>& dirs);

// w^l + alpha * d^l inside the block range; other blocks are copied untouched.
LatentWPlus apply_direction(const LatentWPlus& w, const EditDirection& d, double alpha);

// F + (G^K(w_edit) - G^K(w)), both evaluated under the same noise.
FeatureCode edit_feature(const GeneratorImpl& generator, const FeatureCode& feature, const LatentWPlus& w,
                         const LatentWPlus& w_edit, const NoiseBundle& noise);

struct EditOutput {
  LatentWPlus w;
  FeatureCode feature;
  ImageTensor image;
};

EditOutput edit_image(const GeneratorImpl& generator, const InversionResult& inversion, const EditDirection& d,
                      double alpha, const NoiseBundle& noise);

// G(w of `latent_from`, F of `feature_from`).
ImageTensor style_mix(const GeneratorImpl& generator, const InversionResult& latent_from,
                      const InversionResult& feature_from, const NoiseBundle& noise);

struct ClosedFormResult {
  std::vector<EditDirection> directions;  // descending eigenvalue
  torch::Tensor eigenvalues;              // float64 [top_k]
  torch::Tensor gram;                     // float64 A^T A [w_dim, w_dim]
};

// Top eigenvectors of A^T A, A being the modulation affines of layers lo..hi stacked by rows.
ClosedFormResult closed_form_directions(const GeneratorImpl& generator, int block_lo, int block_hi, int top_k);
// Same on an explicit stacked matrix A [rows, w_dim].
ClosedFormResult closed_form_directions(const torch::Tensor& stacked, int n_layers, int block_lo, int block_hi,
                                        int top_k);

inline constexpr double kBoundaryRidge = 1e-6;

// Ridge least squares of the labels on the concatenated blocks lo..hi (0 means all blocks).
// The unit direction points towards increasing labels. Metadata records the in-sample R^2 and
// the R^2 on a held-out fifth of the samples; `weak_fit` is set when the held-out R^2 < 0.2.
EditDirection linear_boundary(const std::vector<LatentWPlus>& latents, const std::vector<double>& labels,
                              std::string name = "boundary", int block_lo = 0, int block_hi = 0);

}  // namespace fse
