#include "fse/generator.hpp"

#include "fse/rng.hpp"

#include <cmath>
#include <string>

namespace fse {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int ilog2(int v) {
  int r = 0;
  while (v > 1) {
    v >>= 1;
    ++r;
  }
  return r;
}

torch::Tensor instance_norm(const torch::Tensor& x) {
  auto mean = x.mean({2, 3}, /*keepdim=*/true);
  auto var = (x - mean).pow(2).mean({2, 3}, /*keepdim=*/true);
  return (x - mean) * torch::rsqrt(var + 1e-5);
}

void check_finite(const torch::Tensor& x, int layer) {
  if (!torch::isfinite(x).all().item<bool>()) {
    throw NumericError("non-finite activation at generator layer " + std::to_string(layer), layer);
  }
}

}  // namespace

int GeneratorSpec::n_layers() const {
  return 1 + 2 * ilog2(output_resolution / base_resolution);
}

int GeneratorSpec::layer_resolution(int layer) const {
  return base_resolution << (layer / 2);
}

int GeneratorSpec::layer_out_channels(int layer) const {
  const int doublings = ilog2(layer_resolution(layer) / base_resolution);
  return std::max(min_channels, base_channels >> doublings);
}

int GeneratorSpec::layer_in_channels(int layer) const {
  return layer == 1 ? base_channels : layer_out_channels(layer - 1);
}

std::array<int64_t, 3> GeneratorSpec::feature_shape(int k) const {
  if (k == 0) k = k_inject;
  const int prev = k - 1;
  const int64_t res = layer_resolution(prev);
  return {layer_out_channels(prev), res, res};
}

void GeneratorSpec::validate() const {
  if (base_resolution != 4) throw ConfigError("base_resolution must be 4");
  if (!is_pow2(output_resolution) || output_resolution < 8) {
    throw ConfigError("output_resolution must be a power of two >= 8, got " +
                      std::to_string(output_resolution));
  }
  if (z_dim <= 0 || w_dim <= 0 || base_channels <= 0 || min_channels <= 0 || mapping_layers <= 0) {
    throw ConfigError("generator dimensions must be positive");
  }
  if (k_inject < 2 || k_inject > n_layers()) {
    throw ConfigError("k_inject must lie in [2, " + std::to_string(n_layers()) + "], got " +
                      std::to_string(k_inject));
  }
}

GeneratorSpec GeneratorSpec::with_k(int k) const {
  GeneratorSpec s = *this;
  s.k_inject = k;
  s.validate();
  return s;
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = nlohmann::json{{"z_dim", s.z_dim},
                     {"w_dim", s.w_dim},
                     {"base_resolution", s.base_resolution},
                     {"output_resolution", s.output_resolution},
                     {"base_channels", s.base_channels},
                     {"min_channels", s.min_channels},
                     {"mapping_layers", s.mapping_layers},
                     {"k_inject", s.k_inject},
                     {"noise_enabled", s.noise_enabled}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  GeneratorSpec d;
  s.z_dim = j.value("z_dim", d.z_dim);
  s.w_dim = j.value("w_dim", d.w_dim);
  s.base_resolution = j.value("base_resolution", d.base_resolution);
  s.output_resolution = j.value("output_resolution", d.output_resolution);
  s.base_channels = j.value("base_channels", d.base_channels);
  s.min_channels = j.value("min_channels", d.min_channels);
  s.mapping_layers = j.value("mapping_layers", d.mapping_layers);
  s.k_inject = j.value("k_inject", d.k_inject);
  s.noise_enabled = j.value("noise_enabled", d.noise_enabled);
}

GeneratorImpl::GeneratorImpl(GeneratorSpec spec, uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  auto rng = make_rng(derive_seed(init_seed, {0x6e6e}));
  auto normal = [&](std::vector<int64_t> shape, double std) {
    return torch::randn(shape, rng) * std;
  };

  for (int i = 0; i < spec_.mapping_layers; ++i) {
    const int in = i == 0 ? spec_.z_dim : spec_.w_dim;
    mapping_weights_.push_back(register_parameter(
        "mapping_w" + std::to_string(i), normal({spec_.w_dim, in}, std::sqrt(2.0 / in))));
    mapping_biases_.push_back(
        register_parameter("mapping_b" + std::to_string(i), torch::zeros({spec_.w_dim})));
  }

  const_input_ = register_parameter("const", normal({1, spec_.base_channels, 4, 4}, 1.0));

  const int n = spec_.n_layers();
  for (int l = 1; l <= n; ++l) {
    const int in = spec_.layer_in_channels(l);
    const int out = spec_.layer_out_channels(l);
    const std::string p = "layer" + std::to_string(l) + "_";
    StyleLayer s;
    s.conv_weight = register_parameter(p + "conv_w", normal({out, in, 3, 3}, std::sqrt(2.0 / (in * 9))));
    s.conv_bias = register_parameter(p + "conv_b", torch::zeros({out}));
    s.gamma_weight = register_parameter(p + "gamma_w", normal({out, spec_.w_dim}, 0.25 / std::sqrt(spec_.w_dim)));
    s.gamma_bias = register_parameter(p + "gamma_b", torch::ones({out}));
    s.beta_weight = register_parameter(p + "beta_w", normal({out, spec_.w_dim}, 0.25 / std::sqrt(spec_.w_dim)));
    s.beta_bias = register_parameter(p + "beta_b", torch::zeros({out}));
    s.noise_strength = register_parameter(p + "noise", torch::full({out}, 0.1));
    s.upsample = spec_.layer_upsamples(l);
    layers_.push_back(std::move(s));
  }

  const int last = spec_.layer_out_channels(n);
  rgb_weight_ = register_parameter("rgb_w", normal({3, last, 1, 1}, 1.0 / std::sqrt(last)));
  rgb_bias_ = register_parameter("rgb_b", torch::zeros({3}));
}

void GeneratorImpl::set_k_inject(int k) { spec_ = spec_.with_k(k); }

torch::Tensor GeneratorImpl::map_latent(const LatentZ& z) const {
  const auto& v = z.values;
  if (v.dim() != 2 || v.size(1) != spec_.z_dim) {
    throw ConfigError("latent z must have shape [B, " + std::to_string(spec_.z_dim) + "]");
  }
  auto h = v.to(const_input_.dtype());
  for (size_t i = 0; i < mapping_weights_.size(); ++i) {
    h = torch::nn::functional::linear(h, mapping_weights_[i], mapping_biases_[i]);
    if (i + 1 < mapping_weights_.size()) h = torch::leaky_relu(h, 0.2);
  }
  return h;
}

LatentWPlus GeneratorImpl::broadcast_w(const torch::Tensor& w) const {
  auto w2 = w.dim() == 1 ? w.unsqueeze(0) : w;
  if (w2.dim() != 2 || w2.size(1) != spec_.w_dim) {
    throw ConfigError("w must have length " + std::to_string(spec_.w_dim));
  }
  return {w2.unsqueeze(1).expand({w2.size(0), spec_.n_layers(), spec_.w_dim}).contiguous()};
}

void GeneratorImpl::check_w(const LatentWPlus& w) const {
  const auto& b = w.blocks;
  if (b.dim() != 3 || b.size(1) != spec_.n_layers() || b.size(2) != spec_.w_dim) {
    throw ShapeError("W+ code must have shape [B, " + std::to_string(spec_.n_layers()) + ", " +
                     std::to_string(spec_.w_dim) + "]");
  }
}

void GeneratorImpl::check_noise(const NoiseBundle& noise, int64_t batch) const {
  if (!spec_.noise_enabled && noise.maps.empty()) return;
  if (static_cast<int>(noise.maps.size()) != spec_.n_layers()) {
    throw ShapeError("noise bundle must hold " + std::to_string(spec_.n_layers()) + " maps");
  }
  for (int l = 1; l <= spec_.n_layers(); ++l) {
    const auto& m = noise.maps[l - 1];
    const int64_t r = spec_.layer_resolution(l);
    if (m.dim() != 4 || m.size(1) != 1 || m.size(2) != r || m.size(3) != r ||
        (m.size(0) != batch && m.size(0) != 1)) {
      throw ShapeError("noise map " + std::to_string(l) + " must have shape [B, 1, " +
                       std::to_string(r) + ", " + std::to_string(r) + "]");
    }
  }
}

torch::Tensor GeneratorImpl::run_layer(int layer, const torch::Tensor& x, const LatentWPlus& w,
                                       const NoiseBundle& noise) const {
  const StyleLayer& s = layers_[layer - 1];
  auto h = x;
  if (s.upsample) {
    h = torch::nn::functional::interpolate(
        h, torch::nn::functional::InterpolateFuncOptions()
               .scale_factor(std::vector<double>{2.0, 2.0})
               .mode(torch::kBilinear)
               .align_corners(false));
  }
  h = torch::conv2d(h, s.conv_weight, s.conv_bias, 1, 1);
  h = instance_norm(h);
  const auto wl = w.block(layer).to(h.dtype());
  const auto gamma = torch::nn::functional::linear(wl, s.gamma_weight, s.gamma_bias);
  const auto beta = torch::nn::functional::linear(wl, s.beta_weight, s.beta_bias);
  h = h * gamma.unsqueeze(-1).unsqueeze(-1) + beta.unsqueeze(-1).unsqueeze(-1);
  if (spec_.noise_enabled) {
    h = h + noise.maps[layer - 1].to(h.dtype()) * s.noise_strength.view({1, -1, 1, 1});
  }
  h = torch::leaky_relu(h, 0.2);
  check_finite(h, layer);
  return h;
}

torch::Tensor GeneratorImpl::to_rgb(const torch::Tensor& x) const {
  return torch::tanh(torch::conv2d(x, rgb_weight_, rgb_bias_));
}

ImageTensor GeneratorImpl::synthesize(const LatentWPlus& w, const NoiseBundle& noise) const {
  check_w(w);
  check_noise(noise, w.batch());
  auto x = const_input_.expand({w.batch(), -1, -1, -1});
  for (int l = 1; l <= spec_.n_layers(); ++l) x = run_layer(l, x, w, noise);
  return {to_rgb(x)};
}

SynthesisTrace GeneratorImpl::synthesize_traced(const LatentWPlus& w, const NoiseBundle& noise) const {
  check_w(w);
  check_noise(noise, w.batch());
  SynthesisTrace trace;
  trace.noise_used = noise;
  auto x = const_input_.expand({w.batch(), -1, -1, -1});
  for (int l = 1; l <= spec_.n_layers(); ++l) {
    trace.layer_inputs.push_back(x);
    x = run_layer(l, x, w, noise);
  }
  trace.image = {to_rgb(x)};
  return trace;
}

FeatureCode GeneratorImpl::extract_features_at_k(const LatentWPlus& w, const NoiseBundle& noise) const {
  check_w(w);
  check_noise(noise, w.batch());
  auto x = const_input_.expand({w.batch(), -1, -1, -1});
  for (int l = 1; l < spec_.k_inject; ++l) x = run_layer(l, x, w, noise);
  return {x};
}

ImageTensor GeneratorImpl::synthesize_with_feature(const LatentWPlus& w, const FeatureCode& feature,
                                                   const NoiseBundle& noise) const {
  check_w(w);
  check_noise(noise, w.batch());
  const auto shape = spec_.feature_shape();
  const auto& f = feature.tensor;
  if (f.dim() != 4 || f.size(0) != w.batch() || f.size(1) != shape[0] || f.size(2) != shape[1] ||
      f.size(3) != shape[2]) {
    throw ShapeError("feature code must have shape [B, " + std::to_string(shape[0]) + ", " +
                     std::to_string(shape[1]) + ", " + std::to_string(shape[2]) + "]");
  }
  auto x = f;
  for (int l = spec_.k_inject; l <= spec_.n_layers(); ++l) x = run_layer(l, x, w, noise);
  return {to_rgb(x)};
}

std::vector<torch::Tensor> GeneratorImpl::style_affine_weights() const {
  std::vector<torch::Tensor> out;
  for (const auto& s : layers_) out.push_back(s.gamma_weight);
  return out;
}

NoiseBundle GeneratorImpl::random_noise(int64_t batch, uint64_t seed) const {
  auto rng = make_rng(seed);
  NoiseBundle nb;
  for (int l = 1; l <= spec_.n_layers(); ++l) {
    const int64_t r = spec_.layer_resolution(l);
    nb.maps.push_back(torch::randn({batch, 1, r, r}, rng).to(const_input_.dtype()));
  }
  return nb;
}

NoiseBundle GeneratorImpl::zero_noise(int64_t batch) const {
  NoiseBundle nb;
  for (int l = 1; l <= spec_.n_layers(); ++l) {
    const int64_t r = spec_.layer_resolution(l);
    nb.maps.push_back(torch::zeros({batch, 1, r, r}, const_input_.options()));
  }
  return nb;
}

LatentZ GeneratorImpl::random_z(int64_t batch, uint64_t seed) const {
  auto rng = make_rng(seed);
  return {torch::randn({batch, spec_.z_dim}, rng).to(const_input_.dtype())};
}

torch::Tensor GeneratorImpl::mean_w(int64_t samples, uint64_t seed) const {
  torch::NoGradGuard no_grad;
  constexpr int64_t chunk = 1000;
  auto acc = torch::zeros({spec_.w_dim}, torch::kFloat64);
  int64_t done = 0;
  for (int64_t i = 0; done < samples; ++i) {
    const int64_t b = std::min(chunk, samples - done);
    auto w = map_latent(random_z(b, derive_seed(seed, {static_cast<uint64_t>(i)})));
    acc += w.to(torch::kFloat64).sum(0);
    done += b;
  }
  return (acc / static_cast<double>(samples)).to(const_input_.dtype());
}

NoiseBundle NoiseBundle::select_rows(const std::vector<int64_t>& rows) const {
  auto idx = torch::tensor(rows, torch::kLong);
  NoiseBundle out;
  for (const auto& m : maps) out.maps.push_back(m.index_select(0, idx));
  return out;
}

NoiseBundle NoiseBundle::cat(const std::vector<NoiseBundle>& parts) {
  NoiseBundle out;
  if (parts.empty()) return out;
  for (size_t l = 0; l < parts.front().maps.size(); ++l) {
    std::vector<torch::Tensor> ms;
    for (const auto& p : parts) ms.push_back(p.maps[l]);
    out.maps.push_back(torch::cat(ms, 0));
  }
  return out;
}

}  // namespace fse
