#include "fse/gan.hpp"

#include "fse/model.hpp"
#include "fse/rng.hpp"

#include <cmath>
#include <string>

namespace fse {

DiscriminatorImpl::DiscriminatorImpl(int resolution, int base_channels, uint64_t init_seed)
    : resolution_(resolution), base_channels_(base_channels) {
  auto rng = make_rng(derive_seed(init_seed, {0xd15c}));
  auto he = [&](std::vector<int64_t> shape, int64_t fan_in) {
    return torch::randn(shape, rng) * std::sqrt(2.0 / static_cast<double>(fan_in));
  };
  int c = base_channels;
  rgb_w_ = register_parameter("rgb_w", he({c, 3, 1, 1}, 3));
  rgb_b_ = register_parameter("rgb_b", torch::zeros({c}));
  int i = 0;
  for (int r = resolution; r > 4; r /= 2, ++i) {
    const int out = std::min(c * 2, base_channels * 8);
    conv_w_.push_back(register_parameter("conv" + std::to_string(i) + "a_w", he({c, c, 3, 3}, c * 9)));
    conv_b_.push_back(register_parameter("conv" + std::to_string(i) + "a_b", torch::zeros({c})));
    conv_w_.push_back(register_parameter("conv" + std::to_string(i) + "b_w", he({out, c, 3, 3}, c * 9)));
    conv_b_.push_back(register_parameter("conv" + std::to_string(i) + "b_b", torch::zeros({out})));
    c = out;
  }
  fc1_w_ = register_parameter("fc1_w", he({c, c * 16}, c * 16));
  fc1_b_ = register_parameter("fc1_b", torch::zeros({c}));
  fc2_w_ = register_parameter("fc2_w", he({1, c}, c) * 0.5);
  fc2_b_ = register_parameter("fc2_b", torch::zeros({1}));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) const {
  auto h = torch::leaky_relu(torch::conv2d(images, rgb_w_, rgb_b_), 0.2);
  for (size_t i = 0; i < conv_w_.size(); i += 2) {
    h = torch::leaky_relu(torch::conv2d(h, conv_w_[i], conv_b_[i], 1, 1), 0.2);
    h = torch::leaky_relu(torch::conv2d(h, conv_w_[i + 1], conv_b_[i + 1], 1, 1), 0.2);
    h = torch::avg_pool2d(h, 2);
  }
  h = torch::leaky_relu(torch::nn::functional::linear(h.flatten(1), fc1_w_, fc1_b_), 0.2);
  return torch::nn::functional::linear(h, fc2_w_, fc2_b_).squeeze(1);
}

void GanConfig::validate() const {
  generator.validate();
  if (steps < 1 || batch_size < 1 || r1_every < 1 || d_channels < 1) throw ConfigError("GAN counts must be positive");
  if (lr <= 0 || r1_gamma < 0) throw ConfigError("GAN lr must be positive and r1_gamma nonnegative");
}

void to_json(nlohmann::json& j, const GanConfig& c) {
  j = nlohmann::json{{"generator", c.generator}, {"steps", c.steps},       {"batch_size", c.batch_size},
                     {"lr", c.lr},               {"beta1", c.beta1},       {"beta2", c.beta2},
                     {"r1_gamma", c.r1_gamma},   {"r1_every", c.r1_every}, {"d_channels", c.d_channels},
                     {"seed", c.seed},           {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, GanConfig& c) {
  GanConfig d;
  c.generator = j.value("generator", d.generator);
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.r1_gamma = j.value("r1_gamma", d.r1_gamma);
  c.r1_every = j.value("r1_every", d.r1_every);
  c.d_channels = j.value("d_channels", d.d_channels);
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
}

GanResult pretrain_generator(const GanConfig& config, const ImageDataset& data,
                             const std::function<void(const nlohmann::json&)>& on_log) {
  config.validate();
  const auto& spec = config.generator;
  if (data.resolution() != spec.output_resolution) {
    throw ConfigError("dataset resolution " + std::to_string(data.resolution()) +
                      " differs from generator output_resolution " + std::to_string(spec.output_resolution));
  }
  torch::manual_seed(config.seed);
  GanResult res;
  res.generator = Generator(spec, derive_seed(config.seed, {0x6e}));
  res.discriminator = Discriminator(spec.output_resolution, config.d_channels, derive_seed(config.seed, {0xd}));
  auto& g = *res.generator;
  auto& d = *res.discriminator;

  torch::optim::Adam opt_g(g.parameters(),
                           torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2}).eps(1e-8));
  torch::optim::Adam opt_d(d.parameters(),
                           torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2}).eps(1e-8));

  const auto reals_all = data.images();
  const int64_t n = reals_all.size(0);
  const int64_t b = config.batch_size;

  for (int step = 0; step < config.steps; ++step) {
    const uint64_t s = static_cast<uint64_t>(step);
    auto pick = torch::randint(n, {b}, make_rng(derive_seed(config.seed, {s, 0x1})));
    const auto reals = reals_all.index_select(0, pick);

    // Discriminator update.
    torch::Tensor fakes;
    {
      torch::NoGradGuard no_grad;
      const auto w = g.broadcast_w(g.map_latent(g.random_z(b, derive_seed(config.seed, {s, 0x2}))));
      fakes = g.synthesize(w, g.random_noise(b, derive_seed(config.seed, {s, 0x3}))).tensor;
    }
    opt_d.zero_grad();
    const bool do_r1 = config.r1_gamma > 0 && step % config.r1_every == 0;
    auto real_in = do_r1 ? reals.clone().requires_grad_(true) : reals;
    const auto real_logits = d.forward(real_in);
    const auto fake_logits = d.forward(fakes);
    auto loss_d = torch::softplus(fake_logits).mean() + torch::softplus(-real_logits).mean();
    double r1_value = 0.0;
    if (do_r1) {
      const auto grad = torch::autograd::grad({real_logits.sum()}, {real_in}, {}, /*retain_graph=*/true,
                                              /*create_graph=*/true)[0];
      const auto r1 = grad.pow(2).sum({1, 2, 3}).mean();
      r1_value = r1.item<double>();
      loss_d = loss_d + 0.5 * config.r1_gamma * config.r1_every * r1;
    }
    loss_d.backward();
    opt_d.step();

    // Generator update.
    opt_g.zero_grad();
    for (auto& p : d.parameters()) p.set_requires_grad(false);
    const auto w = g.broadcast_w(g.map_latent(g.random_z(b, derive_seed(config.seed, {s, 0x4}))));
    const auto gen = g.synthesize(w, g.random_noise(b, derive_seed(config.seed, {s, 0x5}))).tensor;
    const auto loss_g = torch::softplus(-d.forward(gen)).mean();
    loss_g.backward();
    opt_g.step();
    for (auto& p : d.parameters()) p.set_requires_grad(true);

    const double ld = loss_d.item<double>(), lg = loss_g.item<double>();
    if (!std::isfinite(ld) || !std::isfinite(lg)) {
      throw NumericError("GAN training diverged at step " + std::to_string(step), step);
    }
    if (step % config.log_every == 0 || step + 1 == config.steps) {
      nlohmann::json entry = {{"step", step}, {"loss_d", ld}, {"loss_g", lg}, {"r1", r1_value}};
      res.log.push_back(entry);
      if (on_log) on_log(entry);
    }
  }

  store_generator(res.archive, g);
  store_module(res.archive, "discriminator/", d);
  res.archive.specs()["gan_config"] = config;
  res.archive.specs()["discriminator"] = {{"resolution", d.resolution()}, {"base_channels", d.base_channels()}};
  return res;
}

double discriminator_accuracy(const DiscriminatorImpl& d, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  const auto logits = d.forward(images);
  return (logits > 0).to(torch::kFloat64).mean().item<double>();
}

}  // namespace fse
