#include "fse/metrics.hpp"

#include "fse/model.hpp"

#include <cmath>
#include <sstream>

namespace fse {

namespace {

torch::Tensor as_f64(const ImageTensor& x) { return x.tensor.detach().to(torch::kFloat64); }

void require_pair(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (a.tensor.sizes() != b.tensor.sizes()) throw ShapeError(std::string(what) + ": image shapes differ");
  if (a.tensor.dim() != 4) throw ShapeError(std::string(what) + ": expected [B, C, H, W] images");
}

torch::Tensor gaussian_window(int size, double sigma) {
  auto coords = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-coords.pow(2) / (2 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

}  // namespace

torch::Tensor per_image_mse(const ImageTensor& a, const ImageTensor& b) {
  require_pair(a, b, "mse");
  return (as_f64(a) - as_f64(b)).pow(2).flatten(1).mean(1);
}

torch::Tensor psnr(const ImageTensor& a, const ImageTensor& b) {
  const auto mse = per_image_mse(a, b);
  auto db = 10.0 * torch::log10(kImageRange * kImageRange / mse);
  // mse == 0 gives +inf, which the cap absorbs.
  return torch::clamp_max(db, kPsnrCapDb);
}

torch::Tensor ssim(const ImageTensor& a, const ImageTensor& b) {
  require_pair(a, b, "ssim");
  constexpr int win = 11;
  const auto x = as_f64(a), y = as_f64(b);
  const int64_t c = x.size(1);
  if (x.size(2) < win || x.size(3) < win) throw ShapeError("ssim needs images of at least 11x11");
  const auto w = gaussian_window(win, 1.5).view({1, 1, win, win}).expand({c, 1, win, win}).contiguous();
  auto filt = [&](const torch::Tensor& t) { return at::conv2d(t, w, torch::Tensor(), at::IntArrayRef{1}, at::IntArrayRef{0}, at::IntArrayRef{1}, c); };
  const double c1 = std::pow(0.01 * kImageRange, 2), c2 = std::pow(0.03 * kImageRange, 2);
  const auto mx = filt(x), my = filt(y);
  const auto sxx = filt(x * x) - mx * mx;
  const auto syy = filt(y * y) - my * my;
  const auto sxy = filt(x * y) - mx * my;
  const auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.flatten(2).mean(2).mean(1);
}

torch::Tensor lpips_distance(const ImageTensor& a, const ImageTensor& b, const Embedder& v) {
  torch::NoGradGuard no_grad;
  return multiscale_lpips(a, b, v, 1).to(torch::kFloat64);
}

torch::Tensor id_similarity(const ImageTensor& a, const ImageTensor& b, const Embedder& r) {
  require_pair(a, b, "id_similarity");
  torch::NoGradGuard no_grad;
  const auto ea = r.levels({as_f64(a)}).back();
  const auto eb = r.levels({as_f64(b)}).back();
  return (ea * eb).sum(1).clamp(-1.0, 1.0);
}

double identity_consistency(const ImageTensor& frames, const Embedder& r) {
  torch::NoGradGuard no_grad;
  const int64_t n = frames.tensor.size(0);
  if (n < 2) throw ConfigError("identity consistency needs at least two frames");
  const auto e = r.levels({as_f64(frames)}).back();
  const auto sims = (e.slice(0, 1, n) * e.slice(0, 0, 1)).sum(1);
  return stable_mean(sims);
}

double fid(const torch::Tensor& real_feats, const torch::Tensor& fake_feats, double ridge) {
  const auto r = real_feats.detach().to(torch::kFloat64);
  const auto f = fake_feats.detach().to(torch::kFloat64);
  if (r.dim() != 2 || f.dim() != 2 || r.size(1) != f.size(1)) throw ShapeError("fid expects [M, D] feature sets");
  const int64_t d = r.size(1);
  if (r.size(0) < d + 1 || f.size(0) < d + 1) {
    throw ConfigError("fid needs at least D + 1 = " + std::to_string(d + 1) + " samples per set");
  }
  auto cov = [&](const torch::Tensor& x) {
    const auto xc = x - x.mean(0, true);
    return xc.t().mm(xc) / static_cast<double>(x.size(0) - 1) + ridge * torch::eye(d, torch::kFloat64);
  };
  const auto mu_diff = r.mean(0) - f.mean(0);
  const auto sr = cov(r), sf = cov(f);

  // tr (Sr Sf)^{1/2} = tr (Sr^{1/2} Sf Sr^{1/2})^{1/2}, the inner matrix being symmetric PSD.
  auto [er, vr] = torch::linalg_eigh(sr);
  const auto sr_half = vr.mm(torch::diag(er.clamp_min(0).sqrt())).mm(vr.t());
  auto inner = sr_half.mm(sf).mm(sr_half);
  inner = 0.5 * (inner + inner.t());
  const auto ei = std::get<0>(torch::linalg_eigh(inner));
  const double tr_sqrt = ei.clamp_min(0).sqrt().sum().item<double>();

  return mu_diff.pow(2).sum().item<double>() + sr.trace().item<double>() + sf.trace().item<double>() -
         2.0 * tr_sqrt;
}

double stable_mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(values.size());
}

double stable_mean(const torch::Tensor& values) {
  const auto v = values.detach().to(torch::kFloat64).contiguous().flatten();
  return stable_mean(std::vector<double>(v.data_ptr<double>(), v.data_ptr<double>() + v.numel()));
}

std::string MetricsReport::csv_header() { return "label,n_samples,mse,psnr_db,ssim,lpips,id_similarity,fid"; }

std::string MetricsReport::csv_row(const std::string& label) const {
  std::ostringstream os;
  os.precision(10);
  os << label << ',' << n_samples << ',' << mse << ',' << psnr_db << ',' << ssim << ',' << lpips << ','
     << id_similarity << ',';
  if (fid) os << *fid;
  return os.str();
}

void to_json(nlohmann::json& j, const MetricsReport& m) {
  j = nlohmann::json{{"mse", m.mse},     {"psnr_db", m.psnr_db},           {"ssim", m.ssim},
                     {"lpips", m.lpips}, {"id_similarity", m.id_similarity}, {"n_samples", m.n_samples}};
  j["fid"] = m.fid ? nlohmann::json(*m.fid) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, MetricsReport& m) {
  m.mse = j.at("mse");
  m.psnr_db = j.at("psnr_db");
  m.ssim = j.at("ssim");
  m.lpips = j.at("lpips");
  m.id_similarity = j.at("id_similarity");
  m.n_samples = j.at("n_samples");
  if (j.contains("fid") && !j.at("fid").is_null()) m.fid = j.at("fid").get<double>();
}

void to_json(nlohmann::json& j, const EvalReport& r) { j = nlohmann::json{{"x1", r.x1}, {"x2", r.x2}}; }

MetricsReport compute_metrics(const ImageTensor& reconstructions, const ImageTensor& targets,
                              const EmbedderSet& emb) {
  torch::NoGradGuard no_grad;
  MetricsReport m;
  m.n_samples = targets.tensor.size(0);
  m.mse = stable_mean(per_image_mse(reconstructions, targets));
  m.psnr_db = stable_mean(psnr(reconstructions, targets));
  m.ssim = stable_mean(ssim(reconstructions, targets));
  m.lpips = stable_mean(lpips_distance(reconstructions, targets, *emb.perceptual));
  m.id_similarity = stable_mean(id_similarity(reconstructions, targets, *emb.identity));
  const auto fr = emb.identity->levels({targets.tensor.to(torch::kFloat64)}).back();
  const auto ff = emb.identity->levels({reconstructions.tensor.to(torch::kFloat64)}).back();
  if (m.n_samples >= fr.size(1) + 1) m.fid = fid(fr, ff);
  return m;
}

EvalReport evaluate(const EncoderImpl& encoder, const GeneratorImpl& generator, const ImageDataset& dataset,
                    const EmbedderSet& embedders, const NoiseBundle& noise, int64_t chunk) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> x1s, x2s;
  const auto& imgs = dataset.images();
  for (int64_t i = 0; i < imgs.size(0); i += chunk) {
    const auto x = imgs.slice(0, i, std::min(i + chunk, imgs.size(0)));
    NoiseBundle nb;
    for (const auto& m : noise.maps) nb.maps.push_back(m.expand({x.size(0), -1, -1, -1}));
    const auto inv = invert_image(encoder, generator, {x}, nb);
    x1s.push_back(inv.x1.tensor);
    x2s.push_back(inv.x2.tensor);
  }
  EvalReport r;
  r.x1 = compute_metrics({torch::cat(x1s, 0)}, {imgs}, embedders);
  r.x2 = compute_metrics({torch::cat(x2s, 0)}, {imgs}, embedders);
  return r;
}

}  // namespace fse
