#include "fse/training.hpp"

#include "fse/editing.hpp"
#include "fse/model.hpp"
#include "fse/rng.hpp"

#include <cmath>
#include <sstream>

namespace fse {

void to_json(nlohmann::json& j, const AblationSwitches& a) {
  j = nlohmann::json{{"multiscale", a.multiscale}, {"feature_branch", a.feature_branch},
                     {"synthetic_data", a.synthetic_data}};
}

void from_json(const nlohmann::json& j, AblationSwitches& a) {
  a.multiscale = j.value("multiscale", true);
  a.feature_branch = j.value("feature_branch", true);
  a.synthetic_data = j.value("synthetic_data", true);
}

TrainConfig TrainConfig::paper_preset() { return TrainConfig{}; }

TrainConfig TrainConfig::desk_preset() {
  TrainConfig c;
  c.epochs = 6;
  c.iters_per_epoch = 500;
  c.lr_drop_epochs = 1;
  return c;
}

TrainConfig TrainConfig::with_ablation(char config) const {
  TrainConfig c = *this;
  switch (config) {
    case 'A':
      c.ablation.multiscale = false;
      c.weights.lpips_scales = 1;
      c.weights.lambda1 *= 3.0;
      break;
    case 'B':
      c.ablation.feature_branch = false;
      break;
    case 'C':
      c.ablation.synthetic_data = false;
      c.composition = {c.batch_size, 0};
      break;
    case 'D':
      break;
    default:
      throw ConfigError(std::string("unknown ablation configuration '") + config + "' (expected A, B, C or D)");
  }
  return c;
}

double TrainConfig::lr_for_epoch(int epoch) const {
  return epoch >= epochs - lr_drop_epochs ? lr / lr_drop_factor : lr;
}

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 1 || iters_per_epoch < 1) throw ConfigError("training counts must be positive");
  if (composition.n_real < 0 || composition.n_synthetic < 0 || composition.total() != batch_size) {
    throw ConfigError("batch composition must add up to batch_size");
  }
  if (!ablation.synthetic_data && composition.n_synthetic != 0) {
    throw ConfigError("synthetic_data = false requires a real-only composition");
  }
  if (lr <= 0 || lr_drop_factor <= 0) throw ConfigError("learning rate settings must be positive");
  if (lr_drop_epochs < 0 || lr_drop_epochs > epochs) throw ConfigError("lr_drop_epochs must lie in [0, epochs]");
  if (log_every < 1 || validate_every < 1 || val_samples < 1) throw ConfigError("logging intervals must be positive");
  weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"composition", {c.composition.n_real, c.composition.n_synthetic}},
                     {"epochs", c.epochs},
                     {"iters_per_epoch", c.iters_per_epoch},
                     {"lr", c.lr},
                     {"lr_drop_factor", c.lr_drop_factor},
                     {"lr_drop_epochs", c.lr_drop_epochs},
                     {"seed", c.seed},
                     {"weights", c.weights},
                     {"ablation", c.ablation},
                     {"k_inject", c.k_inject},
                     {"log_every", c.log_every},
                     {"validate_every", c.validate_every},
                     {"val_samples", c.val_samples},
                     {"encoder", c.encoder}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d = j.value("preset", std::string("desk")) == "paper" ? TrainConfig::paper_preset()
                                                                    : TrainConfig::desk_preset();
  c = d;
  c.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("composition")) {
    const auto comp = j.at("composition").get<std::vector<int>>();
    if (comp.size() != 2) throw ConfigError("composition must be [n_real, n_synthetic]");
    c.composition = {comp[0], comp[1]};
  }
  c.epochs = j.value("epochs", d.epochs);
  c.iters_per_epoch = j.value("iters_per_epoch", d.iters_per_epoch);
  c.lr = j.value("lr", d.lr);
  c.lr_drop_factor = j.value("lr_drop_factor", d.lr_drop_factor);
  c.lr_drop_epochs = j.value("lr_drop_epochs", d.lr_drop_epochs);
  c.seed = j.value("seed", d.seed);
  c.weights = j.value("weights", d.weights);
  c.ablation = j.value("ablation", d.ablation);
  c.k_inject = j.value("k_inject", d.k_inject);
  c.log_every = j.value("log_every", d.log_every);
  c.validate_every = j.value("validate_every", d.validate_every);
  c.val_samples = j.value("val_samples", d.val_samples);
  c.encoder = j.value("encoder", d.encoder);
}

void to_json(nlohmann::json& j, const TrainState& s) {
  j = nlohmann::json{{"step", s.step}, {"epoch", s.epoch}, {"seed", s.seed}};
  j["best_val_m_lpips"] = s.best_val_m_lpips ? nlohmann::json(*s.best_val_m_lpips) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainState& s) {
  s.step = j.at("step");
  s.epoch = j.at("epoch");
  s.seed = j.at("seed");
  if (j.contains("best_val_m_lpips") && !j.at("best_val_m_lpips").is_null()) {
    s.best_val_m_lpips = j.at("best_val_m_lpips").get<double>();
  }
}

namespace {

EncoderSpec encoder_spec_for(const GeneratorSpec& g, const nlohmann::json& overrides) {
  auto j = nlohmann::json(EncoderSpec::for_generator(g));
  for (const auto& key : {"stem_channels", "block_channels", "feature_branch_convs"}) {
    if (overrides.contains(key)) j[key] = overrides.at(key);
  }
  return j.get<EncoderSpec>();
}

}  // namespace

EncoderTrainer::EncoderTrainer(TrainConfig config, ImageDataset train, std::optional<ImageDataset> val,
                               EmbedderSet embedders)
    : config_(std::move(config)),
      train_(std::move(train)),
      val_(std::move(val)),
      reals_(train_.images(), derive_seed(config_.seed, {0x7ea1})),
      embedders_(std::move(embedders)) {
  config_.validate();
  state_.seed = config_.seed;
}

EncoderTrainer::EncoderTrainer(const CheckpointArchive& generator_archive, TrainConfig config, ImageDataset train,
                               std::optional<ImageDataset> val, EmbedderSet embedders)
    : EncoderTrainer(std::move(config), std::move(train), std::move(val), std::move(embedders)) {
  generator_ = load_generator(generator_archive);
  if (config_.k_inject != 0) generator_->set_k_inject(config_.k_inject);
  for (auto& p : generator_->parameters()) p.set_requires_grad(false);
  if (train_.resolution() != generator_->spec().output_resolution) {
    throw ConfigError("training images do not match the generator resolution");
  }

  torch::manual_seed(config_.seed);
  encoder_ = Encoder(encoder_spec_for(generator_->spec(), config_.encoder), derive_seed(config_.seed, {0xe1c}));
  encoder_->init_latent_bias(generator_->mean_w(10000, derive_seed(config_.seed, {0x3ea})));
  optimizer_ = std::make_unique<torch::optim::Adam>(
      encoder_->parameters(), torch::optim::AdamOptions(config_.lr).betas({0.9, 0.999}).eps(1e-8));
  eval_noise_ = generator_->random_noise(1, kEvalNoiseSeed);
}

EncoderTrainer EncoderTrainer::resume(const CheckpointArchive& ckpt, ImageDataset train,
                                      std::optional<ImageDataset> val, EmbedderSet embedders) {
  if (!ckpt.specs().contains("train_config") || !ckpt.specs().contains("train_state")) {
    throw IoError("checkpoint carries no trainer state");
  }
  EncoderTrainer t(ckpt.specs().at("train_config").get<TrainConfig>(), std::move(train), std::move(val),
                   std::move(embedders));
  t.state_ = ckpt.specs().at("train_state").get<TrainState>();
  t.generator_ = load_generator(ckpt);
  for (auto& p : t.generator_->parameters()) p.set_requires_grad(false);
  t.encoder_ = load_encoder(ckpt);
  t.encoder_->train();
  for (auto& p : t.encoder_->parameters()) p.set_requires_grad(true);
  t.eval_noise_ = load_eval_noise(ckpt);
  t.optimizer_ = std::make_unique<torch::optim::Adam>(
      t.encoder_->parameters(), torch::optim::AdamOptions(t.config_.lr).betas({0.9, 0.999}).eps(1e-8));

  const auto& steps = ckpt.specs().at("optimizer");
  for (const auto& p : t.encoder_->named_parameters()) {
    const std::string base = "optim/" + p.key() + "/";
    if (!ckpt.has(base + "exp_avg")) continue;
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->step(steps.at(p.key()).get<int64_t>());
    st->exp_avg(ckpt.get(base + "exp_avg").clone());
    st->exp_avg_sq(ckpt.get(base + "exp_avg_sq").clone());
    t.optimizer_->state()[p.value().unsafeGetTensorImpl()] = std::move(st);
  }
  return t;
}

void EncoderTrainer::set_lr(double lr) {
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

MixedBatch EncoderTrainer::batch_for(int epoch, int64_t step) const {
  return next_batch(reals_, *generator_, config_.composition, derive_seed(config_.seed, {0xba7c}), epoch, step);
}

LossReport EncoderTrainer::train_step(const MixedBatch& batch) {
  const auto x = batch.stacked_images();
  const auto flags = batch.synthetic_flags();
  const int64_t b = x.tensor.size(0);

  // Synthetic rows reuse the exact noise they were generated with; real rows get fresh noise.
  std::vector<NoiseBundle> rows;
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = batch.samples[i];
    if (s.gt_noise) {
      rows.push_back(*s.gt_noise);
    } else {
      rows.push_back(generator_->random_noise(
          1, derive_seed(config_.seed, {static_cast<uint64_t>(state_.step), static_cast<uint64_t>(i), 0x4015})));
    }
  }
  const auto noise = NoiseBundle::cat(rows);

  encoder_->train();
  auto [w, f] = encoder_->encode(x);
  const auto trace = generator_->synthesize_traced(w, noise);

  BatchOutputs out;
  out.target = x;
  out.x1 = trace.image;
  out.is_synthetic = flags;
  if (config_.ablation.feature_branch) {
    out.x2 = generator_->synthesize_with_feature(w, f, noise);
    out.feature = f;
    out.gk = FeatureCode{trace.layer_inputs[generator_->spec().k_inject - 1]};
  }
  const auto terms = compute_loss_terms(out, config_.weights, embedders_);
  const auto total = weighted_total(terms, config_.weights);
  const auto report = make_report(terms, config_.weights);
  if (!std::isfinite(report.total)) {
    throw NumericError("non-finite training loss at step " + std::to_string(state_.step) + ": " +
                           nlohmann::json(report).dump(),
                       static_cast<int>(state_.step));
  }
  optimizer_->zero_grad();
  total.backward();
  optimizer_->step();
  ++state_.step;
  last_report_ = report;
  return report;
}

nlohmann::json EncoderTrainer::validate_now() const {
  if (!val_) return nullptr;
  torch::NoGradGuard no_grad;
  const auto subset = val_->head(config_.val_samples);
  const auto& imgs = subset.images();
  NoiseBundle nb;
  for (const auto& m : eval_noise_.maps) nb.maps.push_back(m.expand({imgs.size(0), -1, -1, -1}));
  const auto inv = invert_image(*encoder_, *generator_, {imgs}, nb);
  nlohmann::json j = {{"kind", "val"},
                      {"step", state_.step},
                      {"m_lpips_x1", stable_mean(multiscale_lpips(inv.x1, {imgs}, *embedders_.perceptual))},
                      {"m_lpips_x2", stable_mean(multiscale_lpips(inv.x2, {imgs}, *embedders_.perceptual))},
                      {"psnr_x1", stable_mean(psnr(inv.x1, {imgs}))},
                      {"psnr_x2", stable_mean(psnr(inv.x2, {imgs}))}};
  return j;
}

void EncoderTrainer::emit(nlohmann::json entry, const TrainCallbacks& cb) {
  log_.push_back(entry);
  if (cb.on_log) cb.on_log(entry);
}

void EncoderTrainer::run(const TrainCallbacks& cb, std::optional<int64_t> max_steps) {
  const int64_t total = config_.total_steps();
  const int64_t end = max_steps ? std::min(total, state_.step + *max_steps) : total;
  if (state_.step == 0 && val_) emit(validate_now(), cb);

  while (state_.step < end) {
    const int epoch = static_cast<int>(state_.step / config_.iters_per_epoch);
    const int64_t in_epoch = state_.step % config_.iters_per_epoch;
    state_.epoch = epoch;
    const double lr = config_.lr_for_epoch(epoch);
    set_lr(lr);
    const auto report = train_step(batch_for(epoch, in_epoch));

    if (state_.step % config_.log_every == 0 || state_.step == total) {
      nlohmann::json j = report;
      j["kind"] = "loss";
      j["step"] = state_.step;
      j["epoch"] = epoch;
      j["lr"] = lr;
      emit(j, cb);
    }
    if (val_ && (state_.step % config_.validate_every == 0 || state_.step == total)) {
      auto v = validate_now();
      const double m = v.at("m_lpips_x2");
      if (!state_.best_val_m_lpips || m < *state_.best_val_m_lpips) state_.best_val_m_lpips = m;
      emit(v, cb);
    }
    if (state_.step % config_.iters_per_epoch == 0) {
      state_.epoch = epoch + 1;
      if (cb.on_epoch) cb.on_epoch(epoch + 1, checkpoint());
    }
  }
}

CheckpointArchive EncoderTrainer::checkpoint() const {
  CheckpointArchive a;
  store_generator(a, *generator_);
  store_encoder(a, *encoder_);
  store_eval_noise(a, eval_noise_);
  a.specs()["train_config"] = config_;
  a.specs()["train_state"] = state_;
  nlohmann::json steps = nlohmann::json::object();
  const auto& st = optimizer_->state();
  for (const auto& p : encoder_->named_parameters()) {
    auto it = st.find(p.value().unsafeGetTensorImpl());
    if (it == st.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    a.put("optim/" + p.key() + "/exp_avg", s.exp_avg());
    a.put("optim/" + p.key() + "/exp_avg_sq", s.exp_avg_sq());
    steps[p.key()] = s.step();
  }
  a.specs()["optimizer"] = steps;
  return a;
}

void to_json(nlohmann::json& j, const AblationRow& r) {
  j = nlohmann::json{{"name", r.name},
                     {"config", r.config},
                     {"delivered", r.delivered},
                     {"x1", r.x1},
                     {"style_mix_effect", r.style_mix_effect},
                     {"checkpoint_hash", r.checkpoint_hash}};
}

void to_json(nlohmann::json& j, const AblationTable& t) { j = nlohmann::json{{"rows", t.rows}}; }

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << MetricsReport::csv_header() << ",style_mix_effect\n";
  for (const auto& r : rows) os << r.delivered.csv_row(r.name) << ',' << r.style_mix_effect << '\n';
  return os.str();
}

double style_mix_effect(const EncoderImpl& encoder, const GeneratorImpl& generator, const ImageDataset& images,
                        const NoiseBundle& noise, int pairs) {
  torch::NoGradGuard no_grad;
  const int64_t n = std::min<int64_t>(2 * static_cast<int64_t>(pairs), images.size() - images.size() % 2);
  if (n < 2) throw ConfigError("style mixing effect needs at least two images");
  std::vector<double> dists;
  for (int64_t i = 0; i < n; i += 2) {
    const auto a = invert_image(encoder, generator, images.image(i), noise);
    const auto b = invert_image(encoder, generator, images.image(i + 1), noise);
    const auto ab = style_mix(generator, a, b, noise);
    const auto ba = style_mix(generator, b, a, noise);
    dists.push_back((ab.tensor - ba.tensor).abs().mean().item<double>());
  }
  return stable_mean(dists);
}

AblationTable run_ablation_suite(const TrainConfig& base, const CheckpointArchive& generator_archive,
                                 const ImageDataset& train, const ImageDataset& val, const EmbedderSet& embedders,
                                 int mix_pairs, const std::vector<int>& k_values,
                                 const std::function<void(const std::string&)>& progress) {
  AblationTable table;
  auto train_one = [&](const std::string& name, const TrainConfig& cfg) {
    if (progress) progress("training " + name);
    EncoderTrainer trainer(generator_archive, cfg, train, val, embedders);
    trainer.run();
    AblationRow row;
    row.name = name;
    row.config = cfg;
    const auto report = evaluate(trainer.encoder(), trainer.generator(), val, embedders, trainer.eval_noise());
    row.x1 = report.x1;
    row.delivered = cfg.ablation.feature_branch ? report.x2 : report.x1;
    row.style_mix_effect = style_mix_effect(trainer.encoder(), trainer.generator(), val, trainer.eval_noise(), mix_pairs);
    row.checkpoint_hash = trainer.checkpoint().sha256();
    return row;
  };

  for (char c : std::string("ABCD")) table.rows.push_back(train_one(std::string(1, c), base.with_ablation(c)));
  const int base_k = base.k_inject != 0 ? base.k_inject
                                        : generator_archive.specs().at("generator").at("k_inject").get<int>();
  for (int k : k_values) {
    const std::string name = "K=" + std::to_string(k);
    if (k == base_k) {
      // Identical configuration to D; training is deterministic, so reuse it.
      AblationRow row = table.rows[3];
      row.name = name;
      table.rows.push_back(row);
      continue;
    }
    TrainConfig cfg = base;
    cfg.k_inject = k;
    table.rows.push_back(train_one(name, cfg));
  }
  return table;
}

}  // namespace fse
