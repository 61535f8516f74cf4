#include "fse/editing.hpp"

#include <sodium.h>

#include <cmath>
#include <cstring>

namespace fse {

namespace {

std::string encode_base64(const torch::Tensor& t) {
  const auto f = t.detach().to(torch::kFloat32).contiguous();
  const auto* bytes = reinterpret_cast<const unsigned char*>(f.data_ptr<float>());
  const size_t n = static_cast<size_t>(f.numel()) * sizeof(float);
  std::string out(sodium_base64_encoded_len(n, sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes, n, sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

torch::Tensor decode_base64(const std::string& text, int64_t rows, int64_t cols) {
  std::vector<unsigned char> buf(text.size());
  size_t len = 0;
  if (sodium_base642bin(buf.data(), buf.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw IoError("per_block is not valid base64");
  }
  if (len != static_cast<size_t>(rows * cols) * sizeof(float)) {
    throw IoError("per_block holds " + std::to_string(len) + " bytes, expected " +
                  std::to_string(rows * cols * sizeof(float)));
  }
  auto t = torch::empty({rows, cols}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), buf.data(), len);
  return t.to(torch::kFloat64);
}

}  // namespace

EditDirection EditDirection::uniform(std::string name, std::string source, int n_layers, int lo, int hi,
                                     const torch::Tensor& v) {
  if (lo < 1 || hi < lo || hi > n_layers) throw ConfigError("block range out of bounds");
  EditDirection d;
  d.name = std::move(name);
  d.source = std::move(source);
  d.block_lo = lo;
  d.block_hi = hi;
  const auto unit = v.to(torch::kFloat64) / v.to(torch::kFloat64).norm();
  auto pb = torch::zeros({n_layers, v.size(0)}, torch::kFloat64);
  pb.slice(0, lo - 1, hi).copy_(unit.unsqueeze(0).expand({hi - lo + 1, -1}) / std::sqrt(hi - lo + 1.0));
  d.per_block = pb;
  return d;
}

void EditDirection::validate() const {
  if (!per_block.defined() || per_block.dim() != 2) throw ShapeError("direction per_block must be [N, w_dim]");
  if (block_lo < 1 || block_hi < block_lo || block_hi > per_block.size(0)) {
    throw ConfigError("direction block_range [" + std::to_string(block_lo) + ", " + std::to_string(block_hi) +
                      "] outside 1.." + std::to_string(per_block.size(0)));
  }
  if (source != "closed_form" && source != "boundary" && source != "manual") {
    throw ConfigError("unknown direction source '" + source + "'");
  }
}

void to_json(nlohmann::json& j, const EditDirection& d) {
  j = nlohmann::json{{"name", d.name},
                     {"source", d.source},
                     {"block_range", {d.block_lo, d.block_hi}},
                     {"n_layers", d.per_block.size(0)},
                     {"w_dim", d.per_block.size(1)},
                     {"per_block", encode_base64(d.per_block)},
                     {"metadata", d.metadata}};
}

void from_json(const nlohmann::json& j, EditDirection& d) {
  if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
  d.name = j.at("name");
  d.source = j.at("source");
  const auto range = j.at("block_range").get<std::vector<int>>();
  if (range.size() != 2) throw ConfigError("block_range must be [lo, hi]");
  d.block_lo = range[0];
  d.block_hi = range[1];
  d.per_block = decode_base64(j.at("per_block").get<std::string>(), j.at("n_layers"), j.at("w_dim"));
  d.metadata = j.value("metadata", nlohmann::json::object());
  d.validate();
}

std::vector<EditDirection> load_directions(const nlohmann::json& j) {
  if (j.is_object() && !j.contains("directions")) return {j.get<EditDirection>()};
  const auto& arr = j.is_object() ? j.at("directions") : j;
  if (!arr.is_array()) throw ConfigError("expected a direction, an array of directions or {\"directions\": [...]}");
  return arr.get<std::vector<EditDirection>>();
}

nlohmann::json directions_to_json(const std::vector<EditDirection>& dirs) {
  return nlohmann::json{{"directions", dirs}};
}

LatentWPlus apply_direction(const LatentWPlus& w, const EditDirection& d, double alpha) {
  d.validate();
  if (w.blocks.dim() != 3 || w.n_layers() != d.per_block.size(0) || w.blocks.size(2) != d.per_block.size(1)) {
    throw ShapeError("direction does not match the latent shape");
  }
  auto out = w.blocks.clone();
  const auto delta = d.per_block.slice(0, d.block_lo - 1, d.block_hi).to(w.blocks.scalar_type()) * alpha;
  out.slice(1, d.block_lo - 1, d.block_hi).add_(delta.unsqueeze(0));
  return {out};
}

FeatureCode edit_feature(const GeneratorImpl& generator, const FeatureCode& feature, const LatentWPlus& w,
                         const LatentWPlus& w_edit, const NoiseBundle& noise) {
  if (w.blocks.sizes() != w_edit.blocks.sizes()) throw ShapeError("edit_feature: w and w_edit shapes differ");
  const auto before = generator.extract_features_at_k(w, noise).tensor;
  const auto after = generator.extract_features_at_k(w_edit, noise).tensor;
  if (feature.tensor.sizes() != before.sizes()) {
    throw ShapeError("edit_feature: feature code shape does not match G^K(w)");
  }
  // The difference goes first so that w_edit == w returns F bit for bit.
  return {feature.tensor + (after - before)};
}

EditOutput edit_image(const GeneratorImpl& generator, const InversionResult& inversion, const EditDirection& d,
                      double alpha, const NoiseBundle& noise) {
  torch::NoGradGuard no_grad;
  EditOutput out;
  out.w = apply_direction(inversion.w, d, alpha);
  out.feature = edit_feature(generator, inversion.feature, inversion.w, out.w, noise);
  out.image = generator.synthesize_with_feature(out.w, out.feature, noise);
  return out;
}

ImageTensor style_mix(const GeneratorImpl& generator, const InversionResult& latent_from,
                      const InversionResult& feature_from, const NoiseBundle& noise) {
  torch::NoGradGuard no_grad;
  return generator.synthesize_with_feature(latent_from.w, feature_from.feature, noise);
}

ClosedFormResult closed_form_directions(const torch::Tensor& stacked, int n_layers, int block_lo, int block_hi,
                                        int top_k) {
  if (stacked.dim() != 2) throw ShapeError("closed-form directions need a stacked [rows, w_dim] matrix");
  const int64_t dim = stacked.size(1);
  if (top_k < 1 || top_k > dim) throw ConfigError("top_k must lie in 1..w_dim");
  const auto a = stacked.detach().to(torch::kFloat64);
  ClosedFormResult r;
  r.gram = a.t().mm(a);
  auto [vals, vecs] = torch::linalg_eigh(r.gram);
  // eigh sorts ascending.
  vals = vals.flip(0);
  vecs = vecs.flip(1);
  const double top = vals[0].item<double>();
  if (!(top > 1e-12 * std::max(1.0, r.gram.abs().max().item<double>())) || !std::isfinite(top)) {
    throw NumericError("modulation weights are degenerate (rank 0); no direction to extract", block_lo);
  }
  r.eigenvalues = vals.slice(0, 0, top_k).clone();
  for (int i = 0; i < top_k; ++i) {
    auto v = vecs.select(1, i);
    // Sign convention: largest-magnitude component positive.
    if (v[v.abs().argmax()].item<double>() < 0) v = -v;
    auto d = EditDirection::uniform("closed_form_" + std::to_string(i), "closed_form", n_layers, block_lo,
                                    block_hi, v);
    d.metadata = {{"eigenvalue", vals[i].item<double>()}, {"rank", i}};
    r.directions.push_back(std::move(d));
  }
  return r;
}

ClosedFormResult closed_form_directions(const GeneratorImpl& generator, int block_lo, int block_hi, int top_k) {
  const int n = generator.spec().n_layers();
  if (block_lo < 1 || block_hi < block_lo || block_hi > n) throw ConfigError("block range out of bounds");
  const auto weights = generator.style_affine_weights();
  std::vector<torch::Tensor> rows;
  for (int l = block_lo; l <= block_hi; ++l) rows.push_back(weights[l - 1]);
  return closed_form_directions(torch::cat(rows, 0), n, block_lo, block_hi, top_k);
}

namespace {

// Centred ridge solve; returns (coefficients, intercept).
std::pair<torch::Tensor, double> ridge_fit(const torch::Tensor& x, const torch::Tensor& y) {
  const auto mx = x.mean(0, true);
  const double my = y.mean().item<double>();
  const auto xc = x - mx;
  const auto lhs = xc.t().mm(xc) + kBoundaryRidge * torch::eye(x.size(1), torch::kFloat64);
  const auto beta = torch::linalg_solve(lhs, xc.t().mv(y - my), true);
  return {beta, my - mx.squeeze(0).dot(beta).item<double>()};
}

double r_squared(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& beta, double intercept) {
  const auto pred = x.mv(beta) + intercept;
  const double ss_res = (y - pred).pow(2).sum().item<double>();
  const double ss_tot = (y - y.mean()).pow(2).sum().item<double>();
  return ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
}

}  // namespace

EditDirection linear_boundary(const std::vector<LatentWPlus>& latents, const std::vector<double>& labels,
                              std::string name, int block_lo, int block_hi) {
  if (latents.empty() || latents.size() != labels.size()) {
    throw ConfigError("linear_boundary needs one label per latent");
  }
  std::vector<torch::Tensor> rows;
  for (const auto& w : latents) rows.push_back(w.blocks.detach().to(torch::kFloat64).reshape({-1, w.n_layers(), w.blocks.size(2)}));
  const auto all = torch::cat(rows, 0);
  const int n_layers = static_cast<int>(all.size(1));
  const int64_t w_dim = all.size(2);
  if (block_lo == 0 && block_hi == 0) {
    block_lo = 1;
    block_hi = n_layers;
  }
  if (block_lo < 1 || block_hi < block_lo || block_hi > n_layers) throw ConfigError("block range out of bounds");
  const auto x = all.slice(1, block_lo - 1, block_hi).reshape({all.size(0), -1});
  const int64_t m = x.size(0), p = x.size(1);
  if (m != static_cast<int64_t>(labels.size())) throw ConfigError("each latent must hold exactly one sample");
  if (static_cast<double>(m) <= p / 10.0) {
    throw ConfigError("linear_boundary needs more than dim/10 = " + std::to_string(p / 10.0) + " latents, got " +
                      std::to_string(m));
  }
  const auto y = torch::tensor(labels, torch::kFloat64);
  if ((y - y[0]).abs().max().item<double>() == 0.0) throw ConfigError("linear_boundary labels are constant");

  auto [beta, intercept] = ridge_fit(x, y);
  const double norm = beta.norm().item<double>();
  if (!(norm > 0) || !std::isfinite(norm)) throw NumericError("boundary fit produced no direction", block_lo);
  const double r2 = r_squared(x, y, beta, intercept);

  // Every fifth sample is held out to measure the fit without the in-sample optimism.
  nlohmann::json heldout = nullptr;
  const auto idx = torch::arange(m);
  const auto test_mask = (idx % 5) == 4;
  const int64_t n_test = test_mask.sum().item<int64_t>();
  if (n_test >= 2) {
    const auto xtr = x.index({~test_mask}), ytr = y.index({~test_mask});
    const auto xte = x.index({test_mask}), yte = y.index({test_mask});
    if ((ytr - ytr[0]).abs().max().item<double>() > 0 && (yte - yte[0]).abs().max().item<double>() > 0) {
      auto [b2, c2] = ridge_fit(xtr, ytr);
      heldout = r_squared(xte, yte, b2, c2);
    }
  }
  const double judged = heldout.is_null() ? r2 : heldout.get<double>();

  EditDirection d;
  d.name = std::move(name);
  d.source = "boundary";
  d.block_lo = block_lo;
  d.block_hi = block_hi;
  auto pb = torch::zeros({n_layers, w_dim}, torch::kFloat64);
  pb.slice(0, block_lo - 1, block_hi).copy_((beta / norm).view({block_hi - block_lo + 1, w_dim}));
  d.per_block = pb;
  d.metadata = {{"r2", r2}, {"r2_heldout", heldout}, {"weak_fit", judged < 0.2}, {"samples", m}};
  return d;
}

}  // namespace fse
