#pragma once

#include "fse/generator.hpp"
#include "fse/types.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fse {

struct ShapeAttributes {
  double hue = 0.0;       // [0, 1)
  double radius = 0.25;   // horizontal semi-axis as a fraction of the width
  double cx = 0.5;        // [0.2, 0.8]
  double cy = 0.5;        // [0.2, 0.8]
  double bg_level = 0.0;  // [-0.5, 0.5]

  static const std::vector<std::string>& names();
  double get(const std::string& name) const;

  friend void to_json(nlohmann::json& j, const ShapeAttributes& a);
  friend void from_json(const nlohmann::json& j, ShapeAttributes& a);
};

ShapeAttributes sample_attributes(uint64_t seed);

// Anti-aliased (4x4 supersampled) filled ellipse, vertical semi-axis 0.8 x horizontal,
// over a uniform grey background. Returns [1, 3, R, R].
ImageTensor render_procedural(const ShapeAttributes& attrs, int resolution);

struct SyntheticSample {
  LatentZ z;
  NoiseBundle noise;
  ImageTensor image;  // synthesize(broadcast_w(map_latent(z)), noise)
};

SyntheticSample sample_synthetic(const GeneratorImpl& generator, uint64_t seed);

struct DatasetRecord {
  std::string id;
  std::string file;
  std::string split = "train";
  std::optional<ShapeAttributes> attributes;
};

// Image folder with an optional manifest.jsonl (one {id, file, split, <attributes>} object per
// line). Without a manifest every *.png in the folder is loaded in name order as "train".
class ImageDataset {
 public:
  static ImageDataset load(const std::filesystem::path& dir);
  static ImageDataset write_procedural(const std::filesystem::path& dir, int n, int resolution, uint64_t seed,
                                       int eval_count = 128);
  static ImageDataset from_tensor(torch::Tensor images);

  ImageDataset split(const std::string& name) const;
  ImageDataset head(int64_t n) const;

  int64_t size() const { return images_.size(0); }
  int resolution() const { return static_cast<int>(images_.size(2)); }
  const torch::Tensor& images() const { return images_; }
  ImageTensor image(int64_t i) const { return {images_.slice(0, i, i + 1)}; }
  const std::vector<DatasetRecord>& records() const { return records_; }
  // Values of one procedural attribute for every record; throws if any record lacks attributes.
  std::vector<double> attribute(const std::string& name) const;

 private:
  torch::Tensor images_;  // [N, 3, R, R] float32
  std::vector<DatasetRecord> records_;
};

// Epoch-wise seeded shuffling; batch content is a pure function of (seed, epoch, step).
class RealStream {
 public:
  RealStream(torch::Tensor images, uint64_t seed);
  torch::Tensor take(int64_t epoch, int64_t step, int count) const;
  int64_t size() const { return images_.size(0); }

 private:
  torch::Tensor images_;
  uint64_t seed_;
};

enum class SampleKind { Real, Synthetic };

struct BatchSample {
  ImageTensor image;  // [1, 3, R, R]
  SampleKind kind = SampleKind::Real;
  std::optional<NoiseBundle> gt_noise;  // present exactly for synthetic samples
};

struct Composition {
  int n_real = 2;
  int n_synthetic = 2;
  int total() const { return n_real + n_synthetic; }
};

struct MixedBatch {
  std::vector<BatchSample> samples;
  Composition composition;

  ImageTensor stacked_images() const;
  std::vector<bool> synthetic_flags() const;
};

// Real and synthetic samples interleaved (R, S, R, S, ...) until one kind runs out.
MixedBatch next_batch(const RealStream& reals, const GeneratorImpl& generator, Composition composition,
                      uint64_t seed, int64_t epoch, int64_t step);

}  // namespace fse
