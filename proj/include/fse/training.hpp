#pragma once

#include "fse/checkpoint.hpp"
#include "fse/data.hpp"
#include "fse/encoder.hpp"
#include "fse/generator.hpp"
#include "fse/metrics.hpp"
#include "fse/objectives.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fse {

struct AblationSwitches {
  bool multiscale = true;
  bool feature_branch = true;
  bool synthetic_data = true;

  friend void to_json(nlohmann::json& j, const AblationSwitches& a);
  friend void from_json(const nlohmann::json& j, AblationSwitches& a);
};

struct TrainConfig {
  int batch_size = 4;
  Composition composition{2, 2};
  int epochs = 12;
  int iters_per_epoch = 10000;
  double lr = 1e-4;
  double lr_drop_factor = 10.0;
  int lr_drop_epochs = 2;  // trailing epochs run at lr / lr_drop_factor
  uint64_t seed = 0;
  LossWeights weights;
  AblationSwitches ablation;
  int k_inject = 0;  // 0 keeps the generator's K
  int log_every = 50;
  int validate_every = 500;
  int val_samples = 64;
  nlohmann::json encoder = nlohmann::json::object();  // EncoderSpec overrides (block_channels, ...)

  // Batch 4 = 2 real + 2 synthetic, 12 x 10k iterations, 1e-4 dropped x10 for the last 2 epochs.
  static TrainConfig paper_preset();
  // Same schedule shape at 6 x 500 iterations, last epoch at lr / 10.
  static TrainConfig desk_preset();

  // 'A' single-scale perceptual loss (lambda1 x3), 'B' no feature branch, 'C' real images only,
  // 'D' baseline.
  TrainConfig with_ablation(char config) const;

  double lr_for_epoch(int epoch) const;
  int64_t total_steps() const { return static_cast<int64_t>(epochs) * iters_per_epoch; }
  void validate() const;

  friend void to_json(nlohmann::json& j, const TrainConfig& c);
  friend void from_json(const nlohmann::json& j, TrainConfig& c);
};

struct TrainState {
  int64_t step = 0;  // completed optimizer updates
  int epoch = 0;
  uint64_t seed = 0;  // all randomness is derived from (seed, epoch, step)
  std::optional<double> best_val_m_lpips;

  friend void to_json(nlohmann::json& j, const TrainState& s);
  friend void from_json(const nlohmann::json& j, TrainState& s);
};

struct TrainCallbacks {
  std::function<void(const nlohmann::json&)> on_log;  // loss and validation records
  std::function<void(int epoch, const CheckpointArchive&)> on_epoch;
};

// Trains the encoder against a frozen generator.
class EncoderTrainer {
 public:
  EncoderTrainer(const CheckpointArchive& generator_archive, TrainConfig config, ImageDataset train,
                 std::optional<ImageDataset> val, EmbedderSet embedders = EmbedderSet::desk_default());
  // Restores encoder, optimizer moments and progress from a trainer checkpoint.
  static EncoderTrainer resume(const CheckpointArchive& checkpoint, ImageDataset train,
                               std::optional<ImageDataset> val, EmbedderSet embedders = EmbedderSet::desk_default());

  MixedBatch batch_for(int epoch, int64_t step) const;
  // One dual-inversion forward pass and one optimizer update on the encoder.
  LossReport train_step(const MixedBatch& batch);
  // Validation m-LPIPS and PSNR for both inversions on the pinned evaluation noise.
  nlohmann::json validate_now() const;
  // Trains until the schedule completes, or `max_steps` more updates if given.
  void run(const TrainCallbacks& callbacks = {}, std::optional<int64_t> max_steps = std::nullopt);

  CheckpointArchive checkpoint() const;
  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  const GeneratorImpl& generator() const { return *generator_; }
  const EncoderImpl& encoder() const { return *encoder_; }
  EncoderImpl& encoder() { return *encoder_; }
  const NoiseBundle& eval_noise() const { return eval_noise_; }
  const std::vector<nlohmann::json>& log() const { return log_; }
  const std::optional<LossReport>& last_report() const { return last_report_; }

 private:
  EncoderTrainer(TrainConfig config, ImageDataset train, std::optional<ImageDataset> val, EmbedderSet embedders);
  void set_lr(double lr);
  void emit(nlohmann::json entry, const TrainCallbacks& cb);

  TrainConfig config_;
  TrainState state_;
  Generator generator_{nullptr};
  Encoder encoder_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  ImageDataset train_;
  std::optional<ImageDataset> val_;
  RealStream reals_;
  EmbedderSet embedders_;
  NoiseBundle eval_noise_;
  std::vector<nlohmann::json> log_;
  std::optional<LossReport> last_report_;
};

struct AblationRow {
  std::string name;  // "A".."D" or "K=<k>"
  TrainConfig config;
  MetricsReport delivered;  // x2, or x1 when the feature branch is disabled
  MetricsReport x1;
  double style_mix_effect = 0.0;  // mean |mix(a,b) - mix(b,a)| over image pairs
  std::string checkpoint_hash;

  friend void to_json(nlohmann::json& j, const AblationRow& r);
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string to_csv() const;
  friend void to_json(nlohmann::json& j, const AblationTable& t);
};

// Configurations A-D plus the K sweep {4, 5, 6, 7}, each trained from scratch and evaluated
// on `val`. `mix_pairs` image pairs feed the style-mixing effect size.
AblationTable run_ablation_suite(const TrainConfig& base, const CheckpointArchive& generator_archive,
                                 const ImageDataset& train, const ImageDataset& val,
                                 const EmbedderSet& embedders = EmbedderSet::desk_default(), int mix_pairs = 32,
                                 const std::vector<int>& k_values = {4, 5, 6, 7},
                                 const std::function<void(const std::string&)>& progress = {});

// Mean absolute pixel distance between style_mix(a, b) and style_mix(b, a) over
// consecutive image pairs (0,1), (2,3), ...
double style_mix_effect(const EncoderImpl& encoder, const GeneratorImpl& generator, const ImageDataset& images,
                        const NoiseBundle& noise, int pairs);

}  // namespace fse
