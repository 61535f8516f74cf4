#include "fse/data.hpp"
#include "fse/editing.hpp"
#include "fse/gan.hpp"
#include "fse/image_io.hpp"
#include "fse/metrics.hpp"
#include "fse/model.hpp"
#include "fse/service.hpp"
#include "fse/training.hpp"
#include "fse/video.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Human-readable lines on stderr, or JSON lines on stdout with --json.
struct Log {
  bool json_mode = false;

  void record(const json& j, const std::string& human) const {
    if (json_mode) {
      std::cout << j.dump() << std::endl;
    } else {
      std::cerr << human << std::endl;
    }
  }
  void record(const json& j) const { record(j, j.dump()); }
};

json read_json_file(const fs::path& path) {
  const auto bytes = fse::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw fse::IoError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fse::write_file_atomic(path, std::vector<uint8_t>(text.begin(), text.end()));
}

std::pair<int, int> parse_blocks(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw UsageError("--blocks expects LO:HI");
  try {
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw UsageError("--blocks expects LO:HI");
  }
}

fse::ImageDataset split_or_all(const fse::ImageDataset& ds, const std::string& name) {
  for (const auto& r : ds.records()) {
    if (r.split == name) return ds.split(name);
  }
  return ds;
}

std::vector<fs::path> png_inputs(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  if (files.empty()) throw fse::IoError("no PNG inputs under '" + input.string() + "'");
  return files;
}

fse::ImageTensor read_model_image(const fse::InversionModel& model, const fs::path& path) {
  auto img = fse::read_png(path);
  const int64_t r = model.generator->spec().output_resolution;
  if (img.tensor.size(2) != r || img.tensor.size(3) != r) {
    throw fse::IoError(path.string() + " is not " + std::to_string(r) + "x" + std::to_string(r));
  }
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("FSE_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) at::set_num_threads(n);
  }

  CLI::App app{"Feature-style encoder toolkit: dataset, GAN pretraining, encoder training, inversion and editing"};
  app.require_subcommand(1);
  Log log;
  app.add_flag("--json", log.json_mode, "machine-readable JSON-lines logs on stdout");
  uint64_t seed = 0;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<uint64_t>("--seed", [&](const uint64_t& s) { seed = s; seed_given = true; },
                                       "base seed for all randomness");
    sub->add_flag("--json", log.json_mode, "machine-readable JSON-lines logs on stdout");
  };
  auto add_json = [&](CLI::App* sub) { sub->add_flag("--json", log.json_mode, "machine-readable JSON-lines logs on stdout"); };

  // make-dataset
  auto* mk = app.add_subcommand("make-dataset", "render the procedural shape dataset");
  fs::path mk_out;
  int mk_n = 2000, mk_res = 32, mk_eval = 128;
  mk->add_option("--out", mk_out, "output directory")->required();
  mk->add_option("--n", mk_n, "number of images")->check(CLI::PositiveNumber);
  mk->add_option("--resolution", mk_res, "image side length")->check(CLI::PositiveNumber);
  mk->add_option("--eval-count", mk_eval, "trailing images assigned to the eval split")->check(CLI::NonNegativeNumber);
  add_seed(mk);

  // pretrain-gan
  auto* pg = app.add_subcommand("pretrain-gan", "train the small style-based generator");
  fs::path pg_data, pg_config, pg_out;
  std::optional<int> pg_steps;
  pg->add_option("--data", pg_data, "dataset directory")->required();
  pg->add_option("--config", pg_config, "GAN config JSON");
  pg->add_option("--out", pg_out, "output checkpoint")->required();
  pg->add_option("--steps", pg_steps, "override the number of steps")->check(CLI::PositiveNumber);
  add_seed(pg);

  // train
  auto* tr = app.add_subcommand("train", "train the encoder against a frozen generator");
  fs::path tr_gan, tr_data, tr_config, tr_out, tr_resume;
  std::string tr_ablation = "D", tr_preset = "desk";
  int tr_k = 0;
  std::optional<int64_t> tr_max_steps;
  tr->add_option("--gan", tr_gan, "generator checkpoint");
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--config", tr_config, "training config JSON");
  tr->add_option("--out", tr_out, "output checkpoint")->required();
  tr->add_option("--ablation", tr_ablation, "A, B, C or D")->check(CLI::IsMember({"A", "B", "C", "D"}));
  tr->add_option("--k", tr_k, "feature injection layer")->check(CLI::PositiveNumber);
  tr->add_option("--preset", tr_preset, "desk or paper schedule")->check(CLI::IsMember({"desk", "paper"}));
  tr->add_option("--resume", tr_resume, "continue from a trainer checkpoint");
  tr->add_option("--max-steps", tr_max_steps, "stop after this many updates")->check(CLI::PositiveNumber);
  add_seed(tr);

  // ablate
  auto* ab = app.add_subcommand("ablate", "train configurations A-D and the K sweep, write the comparison table");
  fs::path ab_gan, ab_data, ab_config, ab_out;
  std::vector<int> ab_k = {4, 5, 6, 7};
  ab->add_option("--gan", ab_gan, "generator checkpoint")->required();
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--config", ab_config, "base training config JSON");
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--k-values", ab_k, "injection layers to sweep");
  add_seed(ab);

  // invert
  auto* inv = app.add_subcommand("invert", "invert one PNG or a folder of PNGs");
  fs::path inv_ckpt, inv_input, inv_out;
  std::string inv_variant = "x2";
  inv->add_option("--ckpt", inv_ckpt, "encoder checkpoint")->required();
  inv->add_option("--input", inv_input, "PNG file or directory")->required();
  inv->add_option("--out", inv_out, "output directory")->required();
  inv->add_option("--variant", inv_variant, "x1 = G(w), x2 = G(w, F)")->check(CLI::IsMember({"x1", "x2"}));
  add_json(inv);

  // edit
  auto* ed = app.add_subcommand("edit", "apply a latent direction with feature-aware editing");
  fs::path ed_ckpt, ed_input, ed_dir, ed_out;
  double ed_alpha = 0;
  int ed_index = 0;
  ed->add_option("--ckpt", ed_ckpt, "encoder checkpoint")->required();
  ed->add_option("--input", ed_input, "PNG image")->required();
  ed->add_option("--direction", ed_dir, "direction JSON")->required();
  ed->add_option("--index", ed_index, "direction index within the file")->check(CLI::NonNegativeNumber);
  ed->add_option("--alpha", ed_alpha, "edit strength")->required()->check(
      CLI::Range(-fse::kMaxEditStrength, fse::kMaxEditStrength));
  ed->add_option("--out", ed_out, "output PNG")->required();
  add_json(ed);

  // mix
  auto* mx = app.add_subcommand("mix", "combine the latent code of one image with the feature code of another");
  fs::path mx_ckpt, mx_latent, mx_feature, mx_out;
  mx->add_option("--ckpt", mx_ckpt, "encoder checkpoint")->required();
  mx->add_option("--latent-from", mx_latent, "image providing w")->required();
  mx->add_option("--feature-from", mx_feature, "image providing F")->required();
  mx->add_option("--out", mx_out, "output PNG")->required();
  add_json(mx);

  // directions
  auto* dirs = app.add_subcommand("directions", "discover editing directions");
  dirs->require_subcommand(1);
  auto* sefa = dirs->add_subcommand("sefa", "closed-form directions from the modulation weights");
  fs::path sf_ckpt, sf_out;
  std::string sf_blocks;
  int sf_top = 5;
  sefa->add_option("--ckpt", sf_ckpt, "generator or encoder checkpoint")->required();
  sefa->add_option("--blocks", sf_blocks, "block range LO:HI")->required();
  sefa->add_option("--top", sf_top, "number of directions")->check(CLI::PositiveNumber);
  sefa->add_option("--out", sf_out, "output directory")->required();
  add_json(sefa);
  auto* bnd = dirs->add_subcommand("boundary", "regress a dataset attribute on inverted latents");
  fs::path bd_ckpt, bd_data, bd_out;
  std::string bd_attr, bd_blocks;
  bnd->add_option("--ckpt", bd_ckpt, "encoder checkpoint")->required();
  bnd->add_option("--data", bd_data, "dataset directory with manifest attributes")->required();
  bnd->add_option("--attr", bd_attr, "attribute name")->required();
  bnd->add_option("--blocks", bd_blocks, "block range LO:HI (default: all)");
  bnd->add_option("--out", bd_out, "output JSON")->required();
  add_json(bnd);

  // eval
  auto* ev = app.add_subcommand("eval", "reconstruction metrics for both inversions");
  fs::path ev_ckpt, ev_data, ev_out, ev_csv;
  std::string ev_split = "eval";
  ev->add_option("--ckpt", ev_ckpt, "encoder checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "report JSON")->required();
  ev->add_option("--csv", ev_csv, "also write a CSV table");
  ev->add_option("--split", ev_split, "dataset split (falls back to all images)");
  add_json(ev);

  // video
  auto* vd = app.add_subcommand("video", "invert a frame sequence and report consistency");
  fs::path vd_ckpt, vd_frames, vd_out;
  bool vd_strict = false;
  vd->add_option("--ckpt", vd_ckpt, "encoder checkpoint")->required();
  vd->add_option("--frames", vd_frames, "directory of PNG frames")->required();
  vd->add_option("--out", vd_out, "output directory")->required();
  vd->add_flag("--strict", vd_strict, "abort on unreadable or mis-sized frames");
  add_json(vd);

  // make-video
  auto* mv = app.add_subcommand("make-video", "render a desk-scale frame sequence");
  fs::path mv_out, mv_gan;
  std::string mv_kind = "shape";
  int mv_frames = 16, mv_res = 32;
  mv->add_option("--out", mv_out, "output directory")->required();
  mv->add_option("--kind", mv_kind, "shape trajectory or z interpolation")->check(CLI::IsMember({"shape", "z"}));
  mv->add_option("--gan", mv_gan, "generator checkpoint (for --kind z)");
  mv->add_option("--frames", mv_frames, "frame count")->check(CLI::PositiveNumber);
  mv->add_option("--resolution", mv_res, "frame size (shape kind)")->check(CLI::PositiveNumber);
  add_seed(mv);

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP API for the interactive editor");
  fs::path sv_ckpt, sv_dirs, sv_static;
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1";
  size_t sv_capacity = 64;
  sv->add_option("--ckpt", sv_ckpt, "encoder checkpoint (without it every model route answers 503)");
  sv->add_option("--port", sv_port, "port")->check(CLI::Range(0, 65535));
  sv->add_option("--host", sv_host, "bind address");
  sv->add_option("--directions", sv_dirs, "directory of direction JSON files");
  sv->add_option("--static", sv_static, "built UI to serve at /");
  sv->add_option("--capacity", sv_capacity, "inversion records kept (LRU)")->check(CLI::PositiveNumber);
  add_json(sv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (*mk) {
      const auto ds = fse::ImageDataset::write_procedural(mk_out, mk_n, mk_res, seed, mk_eval);
      log.record({{"event", "dataset"}, {"dir", mk_out.string()}, {"n", ds.size()}, {"resolution", mk_res}},
                 "wrote " + std::to_string(ds.size()) + " images to " + mk_out.string());
    } else if (*pg) {
      fse::GanConfig cfg;
      if (!pg_config.empty()) cfg = read_json_file(pg_config).get<fse::GanConfig>();
      if (seed_given) cfg.seed = seed;
      if (pg_steps) cfg.steps = *pg_steps;
      const auto data = split_or_all(fse::ImageDataset::load(pg_data), "train");
      auto result = fse::pretrain_generator(cfg, data, [&](const json& j) {
        log.record(j, "step " + std::to_string(j.at("step").get<int>()) + "  loss_d " +
                          std::to_string(j.at("loss_d").get<double>()) + "  loss_g " +
                          std::to_string(j.at("loss_g").get<double>()));
      });
      if (pg_out.has_parent_path()) fs::create_directories(pg_out.parent_path());
      result.archive.save(pg_out);
      log.record({{"event", "saved"}, {"path", pg_out.string()}, {"sha256", result.archive.sha256()}},
                 "saved " + pg_out.string());
    } else if (*tr) {
      const auto all = fse::ImageDataset::load(tr_data);
      const auto train = split_or_all(all, "train");
      std::optional<fse::ImageDataset> val;
      for (const auto& r : all.records()) {
        if (r.split == "eval") {
          val = all.split("eval");
          break;
        }
      }
      if (tr_out.has_parent_path()) fs::create_directories(tr_out.parent_path());
      std::ofstream log_file(tr_out.string() + ".log.jsonl");
      fse::TrainCallbacks cb;
      cb.on_log = [&](const json& j) {
        log_file << j.dump() << '\n' << std::flush;
        const std::string kind = j.at("kind");
        std::string human = kind + " step " + std::to_string(j.at("step").get<int64_t>());
        if (kind == "loss") human += "  total " + std::to_string(j.at("total").get<double>());
        if (kind == "val") human += "  m_lpips_x2 " + std::to_string(j.at("m_lpips_x2").get<double>());
        log.record(j, human);
      };
      cb.on_epoch = [&](int epoch, const fse::CheckpointArchive& ckpt) {
        const fs::path p = tr_out.string() + ".epoch" + std::to_string(epoch);
        ckpt.save(p);
        log.record({{"event", "epoch"}, {"epoch", epoch}, {"path", p.string()}}, "saved " + p.string());
      };
      auto trainer = [&] {
        if (!tr_resume.empty()) {
          return fse::EncoderTrainer::resume(fse::CheckpointArchive::load(tr_resume), train, val);
        }
        if (tr_gan.empty()) throw UsageError("train needs --gan unless --resume is given");
        json cj = tr_config.empty() ? json::object() : read_json_file(tr_config);
        if (!cj.contains("preset")) cj["preset"] = tr_preset;
        auto cfg = cj.get<fse::TrainConfig>().with_ablation(tr_ablation[0]);
        if (tr_k) cfg.k_inject = tr_k;
        if (seed_given) cfg.seed = seed;
        return fse::EncoderTrainer(fse::CheckpointArchive::load(tr_gan), cfg, train, val);
      }();
      trainer.run(cb, tr_max_steps);
      const auto ckpt = trainer.checkpoint();
      ckpt.save(tr_out);
      log.record({{"event", "saved"}, {"path", tr_out.string()}, {"sha256", ckpt.sha256()}},
                 "saved " + tr_out.string() + " (" + ckpt.sha256() + ")");
    } else if (*ab) {
      const auto all = fse::ImageDataset::load(ab_data);
      json cj = ab_config.empty() ? json::object() : read_json_file(ab_config);
      auto cfg = cj.get<fse::TrainConfig>();
      if (seed_given) cfg.seed = seed;
      const auto table = fse::run_ablation_suite(cfg, fse::CheckpointArchive::load(ab_gan), split_or_all(all, "train"),
                                                 split_or_all(all, "eval"), fse::EmbedderSet::desk_default(), 32, ab_k,
                                                 [&](const std::string& s) { log.record({{"event", "progress"}, {"message", s}}, s); });
      fs::create_directories(ab_out);
      write_text(ab_out / "ablation.json", json(table).dump(2));
      write_text(ab_out / "ablation.csv", table.to_csv());
      log.record({{"event", "saved"}, {"path", (ab_out / "ablation.json").string()}}, table.to_csv());
    } else if (*inv) {
      const auto model = fse::InversionModel::load(inv_ckpt);
      fs::create_directories(inv_out);
      json rows = json::array();
      for (const auto& f : png_inputs(inv_input)) {
        const auto img = read_model_image(model, f);
        const auto r = model.invert(img);
        const auto& out = inv_variant == "x1" ? r.x1 : r.x2;
        fse::write_file_atomic(inv_out / f.filename(), fse::encode_png(out));
        json row = {{"file", f.filename().string()},
                    {"variant", inv_variant},
                    {"psnr_x1", fse::psnr(r.x1, img).item<double>()},
                    {"psnr_x2", fse::psnr(r.x2, img).item<double>()}};
        log.record(row, f.filename().string() + "  psnr_x1 " + std::to_string(row["psnr_x1"].get<double>()) +
                            "  psnr_x2 " + std::to_string(row["psnr_x2"].get<double>()));
        rows.push_back(row);
      }
      write_text(inv_out / "inversions.json", rows.dump(2));
    } else if (*ed) {
      const auto model = fse::InversionModel::load(ed_ckpt);
      const auto dirs_loaded = fse::load_directions(read_json_file(ed_dir));
      if (ed_index >= static_cast<int>(dirs_loaded.size())) throw UsageError("--index beyond the directions in the file");
      const auto r = model.invert(read_model_image(model, ed_input));
      const auto out = fse::edit_image(*model.generator, r, dirs_loaded[ed_index], ed_alpha, model.noise_for(1));
      if (ed_out.has_parent_path()) fs::create_directories(ed_out.parent_path());
      fse::write_file_atomic(ed_out, fse::encode_png(out.image));
      log.record({{"event", "edit"}, {"out", ed_out.string()}, {"alpha", ed_alpha}}, "wrote " + ed_out.string());
    } else if (*mx) {
      const auto model = fse::InversionModel::load(mx_ckpt);
      const auto a = model.invert(read_model_image(model, mx_latent));
      const auto b = model.invert(read_model_image(model, mx_feature));
      if (mx_out.has_parent_path()) fs::create_directories(mx_out.parent_path());
      fse::write_file_atomic(mx_out, fse::encode_png(fse::style_mix(*model.generator, a, b, model.noise_for(1))));
      log.record({{"event", "mix"}, {"out", mx_out.string()}}, "wrote " + mx_out.string());
    } else if (*sefa) {
      const auto archive = fse::CheckpointArchive::load(sf_ckpt);
      const auto gen = fse::load_generator(archive);
      const auto [lo, hi] = parse_blocks(sf_blocks);
      const auto result = fse::closed_form_directions(*gen, lo, hi, sf_top);
      fs::create_directories(sf_out);
      for (size_t i = 0; i < result.directions.size(); ++i) {
        auto d = result.directions[i];
        d.name = "sefa_" + std::to_string(lo) + "_" + std::to_string(hi) + "_" + std::to_string(i);
        const auto path = sf_out / (d.name + ".json");
        write_text(path, fse::directions_to_json({d}).dump(2));
        log.record({{"event", "direction"}, {"path", path.string()}, {"eigenvalue", d.metadata["eigenvalue"]}},
                   path.string() + "  eigenvalue " + d.metadata["eigenvalue"].dump());
      }
    } else if (*bnd) {
      const auto model = fse::InversionModel::load(bd_ckpt);
      const auto data = fse::ImageDataset::load(bd_data);
      const auto labels = data.attribute(bd_attr);
      std::vector<fse::LatentWPlus> latents;
      for (int64_t i = 0; i < data.size(); i += 64) {
        const auto chunk = data.images().slice(0, i, std::min(i + 64, data.size()));
        const auto r = fse::invert_image(*model.encoder, *model.generator, {chunk}, model.noise_for(chunk.size(0)));
        for (int64_t k = 0; k < chunk.size(0); ++k) latents.push_back({r.w.blocks.slice(0, k, k + 1)});
      }
      int lo = 0, hi = 0;
      if (!bd_blocks.empty()) std::tie(lo, hi) = parse_blocks(bd_blocks);
      const auto d = fse::linear_boundary(latents, labels, bd_attr, lo, hi);
      write_text(bd_out, fse::directions_to_json({d}).dump(2));
      log.record({{"event", "direction"}, {"path", bd_out.string()}, {"metadata", d.metadata}},
                 bd_out.string() + "  " + d.metadata.dump());
    } else if (*ev) {
      const auto model = fse::InversionModel::load(ev_ckpt);
      const auto data = split_or_all(fse::ImageDataset::load(ev_data), ev_split);
      const auto report = fse::evaluate(*model.encoder, *model.generator, data, fse::EmbedderSet::desk_default(),
                                        model.eval_noise);
      json j = report;
      j["checkpoint_hash"] = model.checkpoint_hash;
      write_text(ev_out, j.dump(2));
      if (!ev_csv.empty()) {
        write_text(ev_csv, fse::MetricsReport::csv_header() + "\n" + report.x1.csv_row("x1") + "\n" +
                               report.x2.csv_row("x2") + "\n");
      }
      log.record(j, "x1 psnr " + std::to_string(report.x1.psnr_db) + "  x2 psnr " + std::to_string(report.x2.psnr_db));
    } else if (*vd) {
      const auto model = fse::InversionModel::load(vd_ckpt);
      const auto emb = fse::EmbedderSet::desk_default();
      const auto seq = fse::invert_sequence(vd_frames, model, emb, vd_out, vd_strict);
      for (const auto& s : seq.skipped) log.record({{"event", "skipped"}, {"reason", s}}, "warning: skipped " + s);
      const auto report = fse::sequence_report(seq, *emb.identity);
      write_text(vd_out / "report.json", json(report).dump(2));
      log.record(report, "frames " + std::to_string(report.n_frames) + "  mean psnr " + std::to_string(report.mean_psnr));
    } else if (*mv) {
      if (mv_kind == "z") {
        if (mv_gan.empty()) throw UsageError("--kind z needs --gan");
        const auto gen = fse::load_generator(fse::CheckpointArchive::load(mv_gan));
        fse::write_z_interpolation_video(*gen, mv_out, mv_frames, seed, seed + 1, gen->random_noise(1, fse::kEvalNoiseSeed));
      } else {
        fse::write_procedural_trajectory(mv_out, mv_frames, mv_res, seed);
      }
      log.record({{"event", "video"}, {"dir", mv_out.string()}, {"frames", mv_frames}}, "wrote " + mv_out.string());
    } else if (*sv) {
      std::optional<fse::InversionModel> model;
      if (!sv_ckpt.empty()) model = fse::InversionModel::load(sv_ckpt);
      std::vector<std::pair<std::string, fse::EditDirection>> directions;
      if (!sv_dirs.empty()) directions = fse::load_direction_dir(sv_dirs);
      fse::ServiceOptions opts;
      opts.store_capacity = sv_capacity;
      if (!sv_static.empty()) opts.static_dir = sv_static;
      fse::InversionService service(std::move(model), std::move(directions), opts);
      log.record({{"event", "serving"}, {"host", sv_host}, {"port", sv_port}},
                 "serving on http://" + sv_host + ":" + std::to_string(sv_port));
      service.listen(sv_host, sv_port);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
