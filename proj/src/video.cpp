#include "fse/video.hpp"

#include "fse/data.hpp"
#include "fse/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <string>

namespace fse {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.png", i);
  return buf;
}

}  // namespace

SequenceInversion invert_sequence(const fs::path& frames_dir, const InversionModel& model,
                                  const EmbedderSet& embedders, const std::optional<fs::path>& out_dir, bool strict) {
  if (!fs::is_directory(frames_dir)) throw IoError("frame directory '" + frames_dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(frames_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (out_dir) fs::create_directories(*out_dir);

  const int64_t res = model.generator->spec().output_resolution;
  SequenceInversion seq;
  std::vector<torch::Tensor> sources;
  const auto noise = model.noise_for(1);
  for (const auto& path : files) {
    ImageTensor img;
    try {
      img = read_png(path);
      if (img.tensor.size(2) != res || img.tensor.size(3) != res) {
        throw IoError("frame is " + std::to_string(img.tensor.size(3)) + "x" + std::to_string(img.tensor.size(2)) +
                      ", model expects " + std::to_string(res) + "x" + std::to_string(res));
      }
    } catch (const IoError& e) {
      if (strict) throw IoError(path.filename().string() + ": " + e.what());
      seq.skipped.push_back(path.filename().string() + ": " + e.what());
      continue;
    }
    auto inv = model.invert(img);
    FrameRecord rec;
    rec.file = path.filename().string();
    rec.metrics = compute_metrics(inv.x2, img, embedders);
    if (out_dir) write_file_atomic(*out_dir / rec.file, encode_png(inv.x2));
    seq.frames.push_back(rec);
    seq.inversions.push_back(std::move(inv));
    sources.push_back(img.tensor);
  }
  if (seq.frames.empty()) throw IoError("no usable frames in '" + frames_dir.string() + "'");
  seq.sources = {torch::cat(sources, 0)};

  if (out_dir) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& f : seq.frames) j.push_back({{"file", f.file}, {"metrics", f.metrics}});
    const auto text = nlohmann::json{{"frames", j}, {"skipped", seq.skipped}}.dump(2);
    write_file_atomic(*out_dir / "frames.json", std::vector<uint8_t>(text.begin(), text.end()));
  }
  return seq;
}

void to_json(nlohmann::json& j, const SequenceReport& r) {
  j = nlohmann::json{{"n_frames", r.n_frames},
                     {"mean_psnr", r.mean_psnr},
                     {"mean_ssim", r.mean_ssim},
                     {"mean_lpips", r.mean_lpips},
                     {"psnr_per_frame", r.psnr_per_frame}};
  j["ic_inversion"] = r.ic_inversion ? nlohmann::json(*r.ic_inversion) : nlohmann::json(nullptr);
  j["ic_source"] = r.ic_source ? nlohmann::json(*r.ic_source) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, SequenceReport& r) {
  r.n_frames = j.at("n_frames");
  r.mean_psnr = j.at("mean_psnr");
  r.mean_ssim = j.at("mean_ssim");
  r.mean_lpips = j.at("mean_lpips");
  r.psnr_per_frame = j.at("psnr_per_frame").get<std::vector<double>>();
  r.ic_inversion.reset();
  r.ic_source.reset();
  if (!j.at("ic_inversion").is_null()) r.ic_inversion = j.at("ic_inversion").get<double>();
  if (!j.at("ic_source").is_null()) r.ic_source = j.at("ic_source").get<double>();
}

SequenceReport sequence_report(const SequenceInversion& seq, const Embedder& identity) {
  SequenceReport r;
  r.n_frames = static_cast<int64_t>(seq.frames.size());
  std::vector<double> ssims, lpips;
  for (const auto& f : seq.frames) {
    r.psnr_per_frame.push_back(f.metrics.psnr_db);
    ssims.push_back(f.metrics.ssim);
    lpips.push_back(f.metrics.lpips);
  }
  r.mean_psnr = stable_mean(r.psnr_per_frame);
  r.mean_ssim = stable_mean(ssims);
  r.mean_lpips = stable_mean(lpips);
  if (r.n_frames >= 2) {
    std::vector<torch::Tensor> recon;
    for (const auto& inv : seq.inversions) recon.push_back(inv.x2.tensor);
    r.ic_inversion = identity_consistency({torch::cat(recon, 0)}, identity);
    r.ic_source = identity_consistency(seq.sources, identity);
  }
  return r;
}

void write_z_interpolation_video(const GeneratorImpl& generator, const fs::path& dir, int frames, uint64_t seed_a,
                                 uint64_t seed_b, const NoiseBundle& noise) {
  if (frames < 1) throw ConfigError("a video needs at least one frame");
  torch::NoGradGuard no_grad;
  fs::create_directories(dir);
  const auto za = generator.random_z(1, seed_a).values;
  const auto zb = generator.random_z(1, seed_b).values;
  for (int i = 0; i < frames; ++i) {
    const double t = frames == 1 ? 0.0 : static_cast<double>(i) / (frames - 1);
    const auto z = za * (1.0 - t) + zb * t;
    const auto w = generator.broadcast_w(generator.map_latent({z}));
    write_file_atomic(dir / frame_name(i), encode_png(generator.synthesize(w, noise)));
  }
}

void write_procedural_trajectory(const fs::path& dir, int frames, int resolution, uint64_t seed) {
  if (frames < 1) throw ConfigError("a video needs at least one frame");
  fs::create_directories(dir);
  const auto a = sample_attributes(seed);
  auto b = sample_attributes(seed ^ 0x5eedULL);
  b.bg_level = a.bg_level;
  for (int i = 0; i < frames; ++i) {
    const double t = frames == 1 ? 0.0 : static_cast<double>(i) / (frames - 1);
    ShapeAttributes s;
    s.hue = a.hue + t * (b.hue - a.hue);
    s.radius = a.radius + t * (b.radius - a.radius);
    s.cx = a.cx + t * (b.cx - a.cx);
    s.cy = a.cy + t * (b.cy - a.cy);
    s.bg_level = a.bg_level;
    write_file_atomic(dir / frame_name(i), encode_png(render_procedural(s, resolution)));
  }
}

}  // namespace fse
