#include "fse/data.hpp"

#include "fse/image_io.hpp"
#include "fse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace fse {

const std::vector<std::string>& ShapeAttributes::names() {
  static const std::vector<std::string> n = {"hue", "radius", "cx", "cy", "bg_level"};
  return n;
}

double ShapeAttributes::get(const std::string& name) const {
  if (name == "hue") return hue;
  if (name == "radius") return radius;
  if (name == "cx") return cx;
  if (name == "cy") return cy;
  if (name == "bg_level") return bg_level;
  throw ConfigError("unknown attribute '" + name + "'");
}

void to_json(nlohmann::json& j, const ShapeAttributes& a) {
  j = nlohmann::json{{"hue", a.hue}, {"radius", a.radius}, {"cx", a.cx}, {"cy", a.cy}, {"bg_level", a.bg_level}};
}

void from_json(const nlohmann::json& j, ShapeAttributes& a) {
  a.hue = j.at("hue");
  a.radius = j.at("radius");
  a.cx = j.at("cx");
  a.cy = j.at("cy");
  a.bg_level = j.at("bg_level");
}

ShapeAttributes sample_attributes(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ShapeAttributes a;
  a.hue = u(rng);
  a.radius = 0.15 + 0.2 * u(rng);
  a.cx = 0.2 + 0.6 * u(rng);
  a.cy = 0.2 + 0.6 * u(rng);
  a.bg_level = -0.5 + u(rng);
  return a;
}

namespace {

// HSV (s = 0.8, v = 0.9) to RGB in [-1, 1].
std::array<double, 3> hue_to_rgb(double hue) {
  const double s = 0.8, v = 0.9;
  const double h6 = std::fmod(hue, 1.0) * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  std::array<double, 3> rgb;
  switch (sector) {
    case 0: rgb = {v, t, p}; break;
    case 1: rgb = {q, v, p}; break;
    case 2: rgb = {p, v, t}; break;
    case 3: rgb = {p, q, v}; break;
    case 4: rgb = {t, p, v}; break;
    default: rgb = {v, p, q}; break;
  }
  for (auto& c : rgb) c = 2.0 * c - 1.0;
  return rgb;
}

}  // namespace

ImageTensor render_procedural(const ShapeAttributes& attrs, int resolution) {
  if (resolution <= 0) throw ConfigError("resolution must be positive");
  constexpr int ss = 4;
  const double r = static_cast<double>(resolution);
  const double ax = attrs.radius * r, ay = 0.8 * attrs.radius * r;
  const double cx = attrs.cx * r, cy = attrs.cy * r;
  const auto color = hue_to_rgb(attrs.hue);

  auto img = torch::empty({1, 3, resolution, resolution}, torch::kFloat32);
  auto acc = img.accessor<float, 4>();
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      int inside = 0;
      if (ax > 0 && ay > 0) {
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const double px = x + (sx + 0.5) / ss - cx;
            const double py = y + (sy + 0.5) / ss - cy;
            if ((px * px) / (ax * ax) + (py * py) / (ay * ay) <= 1.0) ++inside;
          }
        }
      }
      const double cov = static_cast<double>(inside) / (ss * ss);
      for (int c = 0; c < 3; ++c) acc[0][c][y][x] = static_cast<float>(cov * color[c] + (1.0 - cov) * attrs.bg_level);
    }
  }
  return {img};
}

SyntheticSample sample_synthetic(const GeneratorImpl& generator, uint64_t seed) {
  torch::NoGradGuard no_grad;
  SyntheticSample s;
  s.z = generator.random_z(1, derive_seed(seed, {1}));
  s.noise = generator.random_noise(1, derive_seed(seed, {2}));
  s.image = generator.synthesize(generator.broadcast_w(generator.map_latent(s.z)), s.noise);
  return s;
}

namespace {

std::string record_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

}  // namespace

ImageDataset ImageDataset::write_procedural(const std::filesystem::path& dir, int n, int resolution, uint64_t seed,
                                            int eval_count) {
  if (n <= 0) throw ConfigError("dataset size must be positive");
  if (eval_count < 0 || eval_count >= n) throw ConfigError("eval_count must lie in [0, n)");
  std::filesystem::create_directories(dir);
  ImageDataset ds;
  std::vector<torch::Tensor> imgs;
  std::ofstream manifest(dir / "manifest.jsonl.part");
  for (int i = 0; i < n; ++i) {
    DatasetRecord rec;
    rec.id = record_id(i);
    rec.file = rec.id + ".png";
    rec.split = i >= n - eval_count ? "eval" : "train";
    rec.attributes = sample_attributes(derive_seed(seed, {static_cast<uint64_t>(i)}));
    const auto img = render_procedural(*rec.attributes, resolution);
    write_png(dir / rec.file, img);
    imgs.push_back(quantize_8bit(img).tensor);
    nlohmann::json line = *rec.attributes;
    line["id"] = rec.id;
    line["file"] = rec.file;
    line["split"] = rec.split;
    manifest << line.dump() << "\n";
    ds.records_.push_back(rec);
  }
  manifest.close();
  std::filesystem::rename(dir / "manifest.jsonl.part", dir / "manifest.jsonl");
  ds.images_ = torch::cat(imgs, 0);
  return ds;
}

ImageDataset ImageDataset::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  ImageDataset ds;
  const auto manifest = dir / "manifest.jsonl";
  if (std::filesystem::exists(manifest)) {
    std::ifstream f(manifest);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      DatasetRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.file = j.value("file", rec.id + ".png");
      rec.split = j.value("split", "train");
      if (j.contains("hue")) rec.attributes = j.get<ShapeAttributes>();
      ds.records_.push_back(rec);
    }
  } else {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) ds.records_.push_back({p.stem().string(), p.filename().string(), "train", {}});
  }
  if (ds.records_.empty()) throw IoError("dataset is empty: " + dir.string());
  std::vector<torch::Tensor> imgs;
  for (const auto& rec : ds.records_) {
    auto img = read_png(dir / rec.file).tensor;
    if (!imgs.empty() && img.sizes() != imgs.front().sizes()) throw IoError("mixed image sizes in " + dir.string());
    imgs.push_back(img);
  }
  ds.images_ = torch::cat(imgs, 0);
  return ds;
}

ImageDataset ImageDataset::from_tensor(torch::Tensor images) {
  ImageDataset ds;
  ds.images_ = images.to(torch::kFloat32);
  for (int64_t i = 0; i < ds.images_.size(0); ++i) ds.records_.push_back({record_id(static_cast<int>(i)), "", "train", {}});
  return ds;
}

ImageDataset ImageDataset::split(const std::string& name) const {
  std::vector<int64_t> rows;
  ImageDataset out;
  for (size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == name) {
      rows.push_back(static_cast<int64_t>(i));
      out.records_.push_back(records_[i]);
    }
  }
  if (rows.empty()) throw ConfigError("dataset has no '" + name + "' split");
  out.images_ = images_.index_select(0, torch::tensor(rows, torch::kLong));
  return out;
}

ImageDataset ImageDataset::head(int64_t n) const {
  ImageDataset out;
  n = std::min(n, size());
  out.images_ = images_.slice(0, 0, n);
  out.records_.assign(records_.begin(), records_.begin() + n);
  return out;
}

std::vector<double> ImageDataset::attribute(const std::string& name) const {
  std::vector<double> out;
  for (const auto& r : records_) {
    if (!r.attributes) throw ConfigError("record " + r.id + " has no attributes");
    out.push_back(r.attributes->get(name));
  }
  return out;
}

RealStream::RealStream(torch::Tensor images, uint64_t seed) : images_(std::move(images)), seed_(seed) {}

torch::Tensor RealStream::take(int64_t epoch, int64_t step, int count) const {
  const int64_t n = images_.size(0);
  if (n == 0) throw ConfigError("real stream is empty");
  auto perm = torch::randperm(n, make_rng(derive_seed(seed_, {static_cast<uint64_t>(epoch), 0x5ea1})));
  std::vector<int64_t> rows;
  for (int j = 0; j < count; ++j) rows.push_back(perm[(step * count + j) % n].item<int64_t>());
  return images_.index_select(0, torch::tensor(rows, torch::kLong));
}

ImageTensor MixedBatch::stacked_images() const {
  std::vector<torch::Tensor> xs;
  for (const auto& s : samples) xs.push_back(s.image.tensor);
  return {torch::cat(xs, 0)};
}

std::vector<bool> MixedBatch::synthetic_flags() const {
  std::vector<bool> f;
  for (const auto& s : samples) f.push_back(s.kind == SampleKind::Synthetic);
  return f;
}

MixedBatch next_batch(const RealStream& reals, const GeneratorImpl& generator, Composition composition,
                      uint64_t seed, int64_t epoch, int64_t step) {
  if (composition.n_real < 0 || composition.n_synthetic < 0 || composition.total() == 0) {
    throw ConfigError("batch composition must contain at least one sample");
  }
  MixedBatch batch;
  batch.composition = composition;
  torch::Tensor real_imgs;
  if (composition.n_real > 0) real_imgs = reals.take(epoch, step, composition.n_real);

  int r = 0, s = 0;
  while (r < composition.n_real || s < composition.n_synthetic) {
    if (r < composition.n_real) {
      batch.samples.push_back({{real_imgs.slice(0, r, r + 1)}, SampleKind::Real, std::nullopt});
      ++r;
    }
    if (s < composition.n_synthetic) {
      const auto syn = sample_synthetic(
          generator, derive_seed(seed, {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step),
                                        static_cast<uint64_t>(s), 0x5717}));
      batch.samples.push_back({syn.image, SampleKind::Synthetic, syn.noise});
      ++s;
    }
  }
  return batch;
}

}  // namespace fse
