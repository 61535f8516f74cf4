#include "fse/objectives.hpp"

#include "fse/rng.hpp"

#include <cmath>
#include <string>

namespace fse {

namespace F = torch::nn::functional;

DeskEmbedder::DeskEmbedder(uint64_t seed, int levels, EmbedderPooling pooling) : pooling_(pooling) {
  if (levels <= 0) throw ConfigError("embedder needs at least one level");
  auto rng = make_rng(derive_seed(seed, {0xe3b}));
  int in = 3;
  for (int i = 0; i < levels; ++i) {
    const int out = 16 * (i + 1);
    weights_.push_back(torch::randn({out, in, 3, 3}, rng).to(torch::kFloat64) * std::sqrt(2.0 / (in * 9)));
    biases_.push_back(torch::randn({out}, rng).to(torch::kFloat64) * 0.1);
    in = out;
  }
}

std::vector<torch::Tensor> DeskEmbedder::levels(const ImageTensor& image) const {
  auto h = image.tensor;
  const auto dt = h.scalar_type();
  std::vector<torch::Tensor> out;
  for (size_t i = 0; i < weights_.size(); ++i) {
    h = torch::silu(torch::conv2d(h, weights_[i].to(dt), biases_[i].to(dt), 2, 1));
    if (pooling_ == EmbedderPooling::Global) {
      out.push_back(F::normalize(h.mean({2, 3}), F::NormalizeFuncOptions().dim(1).eps(1e-12)));
    } else {
      const double hw = static_cast<double>(h.size(2) * h.size(3));
      auto unit = F::normalize(h, F::NormalizeFuncOptions().dim(1).eps(1e-12));
      out.push_back(unit.flatten(1) / std::sqrt(hw));
    }
  }
  return out;
}

std::shared_ptr<const Embedder> desk_embedder(uint64_t seed, int levels, EmbedderPooling pooling) {
  return std::make_shared<DeskEmbedder>(seed, levels, pooling);
}

EmbedderSet EmbedderSet::desk_default() {
  return {desk_embedder(0x1f1f5, 5, EmbedderPooling::Spatial),
          desk_embedder(0xa4cf, 5, EmbedderPooling::Global),
          desk_embedder(0xb15e, 5, EmbedderPooling::Global)};
}

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0) throw ConfigError("loss weights must be nonnegative");
  if (lpips_scales < 1) throw ConfigError("lpips_scales must be >= 1");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"lambda1", w.lambda1},         {"lambda2", w.lambda2},     {"lambda3", w.lambda3},
                     {"lambda4", w.lambda4},         {"mse_on_real", w.mse_on_real},
                     {"face_mode", w.face_mode},     {"lpips_scales", w.lpips_scales}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  LossWeights d;
  w.lambda1 = j.value("lambda1", d.lambda1);
  w.lambda2 = j.value("lambda2", d.lambda2);
  w.lambda3 = j.value("lambda3", d.lambda3);
  w.lambda4 = j.value("lambda4", d.lambda4);
  w.mse_on_real = j.value("mse_on_real", d.mse_on_real);
  w.face_mode = j.value("face_mode", d.face_mode);
  w.lpips_scales = j.value("lpips_scales", d.lpips_scales);
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"mse", r.mse},           {"m_lpips_x1", r.m_lpips_x1}, {"m_lpips_x2", r.m_lpips_x2},
                     {"f_recon", r.f_recon},   {"id_x1", r.id_x1},           {"id_x2", r.id_x2},
                     {"parse_x1", r.parse_x1}, {"parse_x2", r.parse_x2},     {"total", r.total}};
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": operand shapes differ");
}

}  // namespace

torch::Tensor mse_loss(const ImageTensor& reconstruction, const ImageTensor& target) {
  require_same_shape(reconstruction.tensor, target.tensor, "mse_loss");
  return (reconstruction.tensor - target.tensor).pow(2).mean();
}

ImageTensor downsample(const ImageTensor& x, int i) {
  if (i < 0) throw ConfigError("downsample factor exponent must be >= 0");
  auto t = x.tensor;
  for (int k = 0; k < i; ++k) {
    if (t.size(2) < 2 || t.size(3) < 2) throw ShapeError("image too small to downsample");
    t = torch::avg_pool2d(t, 2);
  }
  return {t};
}

torch::Tensor multiscale_lpips(const ImageTensor& reconstruction, const ImageTensor& target, const Embedder& v,
                               int scales) {
  require_same_shape(reconstruction.tensor, target.tensor, "multiscale_lpips");
  torch::Tensor total;
  for (int i = 0; i < scales; ++i) {
    const auto a = v.levels(downsample(reconstruction, i));
    const auto b = v.levels(downsample(target, i));
    const auto d = (torch::cat(a, 1) - torch::cat(b, 1)).norm(2, {1});
    total = total.defined() ? total + d : d;
  }
  return total;
}

torch::Tensor feature_recon_loss(const FeatureCode& f, const FeatureCode& gk) {
  require_same_shape(f.tensor, gk.tensor, "feature_recon_loss");
  return (f.tensor - gk.tensor).pow(2).mean();
}

torch::Tensor multilayer_cosine_loss(const ImageTensor& reconstruction, const ImageTensor& target, const Embedder& e) {
  require_same_shape(reconstruction.tensor, target.tensor, "multilayer_cosine_loss");
  if (e.level_count() != 5) throw ConfigError("multi-layer cosine loss needs a 5-level embedder");
  const auto a = e.levels(reconstruction);
  const auto b = e.levels(target);
  torch::Tensor total;
  for (size_t l = 0; l < a.size(); ++l) {
    const auto term = 1.0 - (a[l] * b[l]).sum(1);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor weighted_total(const LossTerms& t, const LossWeights& w) {
  std::vector<std::pair<double, const torch::Tensor*>> parts = {
      {1.0, &t.mse},          {w.lambda1, &t.m_lpips_x1}, {w.lambda1, &t.m_lpips_x2}, {w.lambda2, &t.f_recon},
      {w.lambda3, &t.id_x1},  {w.lambda3, &t.id_x2},      {w.lambda4, &t.parse_x1},   {w.lambda4, &t.parse_x2}};
  if (!w.face_mode) parts.resize(4);
  torch::Tensor total;
  for (const auto& [weight, term] : parts) {
    if (!term->defined()) continue;
    const auto v = weight * *term;
    total = total.defined() ? total + v : v;
  }
  if (!total.defined()) total = torch::zeros({}, torch::kFloat64);
  return total;
}

LossReport make_report(const LossTerms& t, const LossWeights& w) {
  auto val = [](const torch::Tensor& x) { return x.defined() ? x.detach().item<double>() : 0.0; };
  LossReport r;
  r.mse = val(t.mse);
  r.m_lpips_x1 = val(t.m_lpips_x1);
  r.m_lpips_x2 = val(t.m_lpips_x2);
  r.f_recon = val(t.f_recon);
  r.id_x1 = val(t.id_x1);
  r.id_x2 = val(t.id_x2);
  r.parse_x1 = val(t.parse_x1);
  r.parse_x2 = val(t.parse_x2);
  // Recomposed in double from the itemised values so the report is self-consistent.
  r.total = r.mse + w.lambda1 * (r.m_lpips_x1 + r.m_lpips_x2) + w.lambda2 * r.f_recon;
  if (w.face_mode) r.total += w.lambda3 * (r.id_x1 + r.id_x2) + w.lambda4 * (r.parse_x1 + r.parse_x2);
  return r;
}

LossTerms compute_loss_terms(const BatchOutputs& out, const LossWeights& weights, const EmbedderSet& emb) {
  weights.validate();
  if (!emb.perceptual) throw ConfigError("perceptual embedder is required");
  if (weights.face_mode && (!emb.identity || !emb.parsing)) {
    throw ConfigError("face mode requires identity and parsing embedders");
  }
  const auto batch = out.target.tensor.size(0);
  if (static_cast<int64_t>(out.is_synthetic.size()) != batch) {
    throw ShapeError("is_synthetic must have one flag per batch row");
  }

  LossTerms t;
  std::vector<int64_t> mse_rows;
  for (int64_t i = 0; i < batch; ++i) {
    if (out.is_synthetic[i] || weights.mse_on_real) mse_rows.push_back(i);
  }
  if (!mse_rows.empty()) {
    const auto idx = torch::tensor(mse_rows, torch::kLong);
    t.mse = mse_loss({out.x1.tensor.index_select(0, idx)}, {out.target.tensor.index_select(0, idx)});
  }

  t.m_lpips_x1 = multiscale_lpips(out.x1, out.target, *emb.perceptual, weights.lpips_scales).mean();
  if (out.x2) t.m_lpips_x2 = multiscale_lpips(*out.x2, out.target, *emb.perceptual, weights.lpips_scales).mean();
  if (out.feature && out.gk) t.f_recon = feature_recon_loss(*out.feature, *out.gk);

  if (weights.face_mode) {
    t.id_x1 = multilayer_cosine_loss(out.x1, out.target, *emb.identity).mean();
    t.parse_x1 = multilayer_cosine_loss(out.x1, out.target, *emb.parsing).mean();
    if (out.x2) {
      t.id_x2 = multilayer_cosine_loss(*out.x2, out.target, *emb.identity).mean();
      t.parse_x2 = multilayer_cosine_loss(*out.x2, out.target, *emb.parsing).mean();
    }
  }
  return t;
}

}  // namespace fse
