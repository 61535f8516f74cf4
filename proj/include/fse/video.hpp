#pragma once

#include "fse/metrics.hpp"
#include "fse/model.hpp"
#include "fse/objectives.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fse {

struct FrameRecord {
  std::string file;
  MetricsReport metrics;  // the delivered inversion G(w, F) against the source frame
};

struct SequenceInversion {
  std::vector<FrameRecord> frames;
  std::vector<InversionResult> inversions;
  ImageTensor sources;  // [N, 3, H, W] in frame order
  std::vector<std::string> skipped;  // "<file>: <reason>"
};

// Inverts every *.png in `frames_dir` (sorted by name) independently with the model's pinned
// noise. Unreadable or wrongly sized frames abort with IoError when `strict`, otherwise they
// are skipped and listed. If `out_dir` is given, reconstructions are written there under the
// source names together with frames.json.
SequenceInversion invert_sequence(const std::filesystem::path& frames_dir, const InversionModel& model,
                                  const EmbedderSet& embedders, const std::optional<std::filesystem::path>& out_dir,
                                  bool strict);

struct SequenceReport {
  int64_t n_frames = 0;
  double mean_psnr = 0, mean_ssim = 0, mean_lpips = 0;
  std::optional<double> ic_inversion;  // null below two frames
  std::optional<double> ic_source;
  std::vector<double> psnr_per_frame;

  friend void to_json(nlohmann::json& j, const SequenceReport& r);
  friend void from_json(const nlohmann::json& j, SequenceReport& r);
};

SequenceReport sequence_report(const SequenceInversion& seq, const Embedder& identity);

// Desk-scale clips. Each writes frame_0000.png, frame_0001.png, ... into `dir`.
// Generator frames along the straight line between two z samples, rendered with `noise`.
void write_z_interpolation_video(const GeneratorImpl& generator, const std::filesystem::path& dir, int frames,
                                 uint64_t seed_a, uint64_t seed_b, const NoiseBundle& noise);
// A procedural shape whose centre, radius and hue drift between two random attribute sets.
void write_procedural_trajectory(const std::filesystem::path& dir, int frames, int resolution, uint64_t seed);

}  // namespace fse
