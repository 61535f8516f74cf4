#include "fse/model.hpp"

namespace fse {

void store_generator(CheckpointArchive& archive, const GeneratorImpl& generator) {
  store_module(archive, "generator/", generator);
  archive.specs()["generator"] = generator.spec();
}

Generator load_generator(const CheckpointArchive& archive) {
  if (!archive.specs().contains("generator")) throw IoError("checkpoint has no generator spec");
  Generator g(archive.specs().at("generator").get<GeneratorSpec>());
  load_module(archive, "generator/", *g);
  g->eval();
  return g;
}

void store_encoder(CheckpointArchive& archive, const EncoderImpl& encoder) {
  store_module(archive, "encoder/", encoder);
  archive.specs()["encoder"] = encoder.spec();
}

Encoder load_encoder(const CheckpointArchive& archive) {
  if (!archive.specs().contains("encoder")) throw IoError("checkpoint has no encoder");
  Encoder e(archive.specs().at("encoder").get<EncoderSpec>());
  load_module(archive, "encoder/", *e);
  e->eval();
  return e;
}

void store_eval_noise(CheckpointArchive& archive, const NoiseBundle& noise) {
  for (size_t l = 0; l < noise.maps.size(); ++l) archive.put("eval_noise/" + std::to_string(l + 1), noise.maps[l]);
}

NoiseBundle load_eval_noise(const CheckpointArchive& archive) {
  NoiseBundle nb;
  for (int l = 1; archive.has("eval_noise/" + std::to_string(l)); ++l) {
    nb.maps.push_back(archive.get("eval_noise/" + std::to_string(l)).clone());
  }
  if (nb.maps.empty()) throw IoError("checkpoint has no pinned evaluation noise");
  return nb;
}

InversionModel InversionModel::from_archive(const CheckpointArchive& archive) {
  InversionModel m;
  m.generator = load_generator(archive);
  m.encoder = load_encoder(archive);
  // The encoder was trained for a specific injection layer; the generator follows it.
  m.generator->set_k_inject(m.encoder->spec().k_inject);
  for (auto& p : m.generator->parameters()) p.set_requires_grad(false);
  for (auto& p : m.encoder->parameters()) p.set_requires_grad(false);
  m.eval_noise = load_eval_noise(archive);
  m.checkpoint_hash = archive.sha256();
  return m;
}

InversionModel InversionModel::load(const std::filesystem::path& path) {
  return from_archive(CheckpointArchive::load(path));
}

NoiseBundle InversionModel::noise_for(int64_t batch) const {
  NoiseBundle nb;
  for (const auto& m : eval_noise.maps) nb.maps.push_back(m.expand({batch, -1, -1, -1}));
  return nb;
}

InversionResult InversionModel::invert(const ImageTensor& image) const {
  return invert_image(*encoder, *generator, image, noise_for(image.tensor.size(0)));
}

InversionResult invert_image(const EncoderImpl& encoder, const GeneratorImpl& generator, const ImageTensor& image,
                             const NoiseBundle& noise) {
  torch::NoGradGuard no_grad;
  InversionResult r;
  auto [w, f] = encoder.encode(image);
  r.w = w;
  r.feature = f;
  r.x1 = generator.synthesize(w, noise);
  r.x2 = generator.synthesize_with_feature(w, f, noise);
  return r;
}

}  // namespace fse
