#pragma once

#include "fse/checkpoint.hpp"
#include "fse/encoder.hpp"
#include "fse/generator.hpp"
#include "fse/types.hpp"

#include <filesystem>
#include <string>

namespace fse {

// Archive layout used across the project:
//   tensors  generator/*, encoder/*, discriminator/*, eval_noise/<l>, optim/*
//   specs    generator, encoder, gan_config, train_config, train_state, ...
void store_generator(CheckpointArchive& archive, const GeneratorImpl& generator);
Generator load_generator(const CheckpointArchive& archive);

void store_encoder(CheckpointArchive& archive, const EncoderImpl& encoder);
Encoder load_encoder(const CheckpointArchive& archive);

void store_eval_noise(CheckpointArchive& archive, const NoiseBundle& noise);
NoiseBundle load_eval_noise(const CheckpointArchive& archive);

// Seed of the pinned evaluation noise.
inline constexpr uint64_t kEvalNoiseSeed = 0;

// Frozen generator + trained encoder + the pinned noise used for all inference.
struct InversionModel {
  Generator generator{nullptr};
  Encoder encoder{nullptr};
  NoiseBundle eval_noise;
  std::string checkpoint_hash;

  static InversionModel from_archive(const CheckpointArchive& archive);
  static InversionModel load(const std::filesystem::path& path);

  // Expands the [1, ...] pinned noise to `batch` rows.
  NoiseBundle noise_for(int64_t batch) const;
  InversionResult invert(const ImageTensor& image) const;
};

// encode -> x1 = G(w), x2 = G(w, F), all under the given noise. No gradient tracking.
InversionResult invert_image(const EncoderImpl& encoder, const GeneratorImpl& generator, const ImageTensor& image,
                             const NoiseBundle& noise);

}  // namespace fse
