#include "fse/service.hpp"

#include "fse/image_io.hpp"
#include "fse/metrics.hpp"

// Bursts of slider requests overflow the library default of 5 pending connections.
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <list>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

namespace fse {

namespace fs = std::filesystem;

std::vector<std::pair<std::string, EditDirection>> load_direction_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("direction directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<std::string, EditDirection>> out;
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(f.string() + ": " + e.what());
    }
    const auto dirs = load_directions(j);
    const std::string stem = f.stem().string();
    if (dirs.size() == 1) {
      out.emplace_back(stem, dirs[0]);
    } else {
      for (size_t i = 0; i < dirs.size(); ++i) out.emplace_back(stem + "/" + std::to_string(i), dirs[i]);
    }
  }
  return out;
}

namespace {

struct Record {
  std::string id;
  InversionResult inversion;
  double psnr_x1 = 0, psnr_x2 = 0;
  std::vector<uint8_t> png_x1, png_x2;
  std::string created_at;
};

class RecordStore {
 public:
  explicit RecordStore(size_t capacity) : capacity_(capacity) {}

  void put(std::shared_ptr<const Record> r) {
    std::lock_guard lock(mu_);
    const std::string id = r->id;
    order_.push_front(id);
    map_[id] = {std::move(r), order_.begin()};
    while (map_.size() > capacity_) {
      map_.erase(order_.back());
      order_.pop_back();
    }
  }

  std::shared_ptr<const Record> get(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = map_.find(id);
    if (it == map_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second.second);
    return it->second.first;
  }

  size_t size() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }

 private:
  size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::string> order_;
  std::unordered_map<std::string, std::pair<std::shared_ptr<const Record>, std::list<std::string>::iterator>> map_;
};

struct HttpError {
  int status;
  std::string message;
};

std::string timestamp_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_png(httplib::Response& res, const std::vector<uint8_t>& png) {
  res.status = 200;
  res.set_content(std::string(png.begin(), png.end()), "image/png");
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw HttpError{400, "request body must be a JSON object"};
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw HttpError{400, std::string("malformed JSON: ") + e.what()};
  }
}

std::string string_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) throw HttpError{400, std::string("missing string field '") + key + "'"};
  return j.at(key).get<std::string>();
}

}  // namespace

struct InversionService::Impl {
  std::optional<InversionModel> model;
  std::vector<std::pair<std::string, EditDirection>> directions;
  ServiceOptions options;
  RecordStore store;
  httplib::Server server;
  std::thread thread;
  std::mutex id_mu;
  std::mt19937_64 id_rng{std::random_device{}()};

  Impl(std::optional<InversionModel> m, std::vector<std::pair<std::string, EditDirection>> d, ServiceOptions o)
      : model(std::move(m)), directions(std::move(d)), options(std::move(o)), store(options.store_capacity) {
    routes();
  }

  const InversionModel& require_model() const {
    if (!model) throw HttpError{503, "no model loaded"};
    return *model;
  }

  std::shared_ptr<const Record> require_record(const std::string& id) {
    auto r = store.get(id);
    if (!r) throw HttpError{404, "unknown inversion id '" + id + "'"};
    return r;
  }

  const EditDirection& require_direction(const std::string& id) const {
    for (const auto& [key, d] : directions) {
      if (key == id) return d;
    }
    throw HttpError{404, "unknown direction id '" + id + "'"};
  }

  std::string new_id() {
    std::lock_guard lock(id_mu);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(id_rng()));
    return buf;
  }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, {{"error", e.message}}, e.status);
      } catch (const ShapeError& e) {
        send_json(res, {{"error", e.what()}}, 400);
      } catch (const IoError& e) {
        send_json(res, {{"error", e.what()}}, 400);
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  void routes() {
    server.set_payload_max_length(options.max_upload_bytes);
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        const std::string reason = res.status == 413 ? "upload too large" : httplib::status_message(res.status);
        res.set_content(nlohmann::json{{"error", reason}}.dump(), "application/json");
      }
    });

    server.Get("/api/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"status", model ? "ok" : "no_model"},
                      {"checkpoint_hash", model ? nlohmann::json(model->checkpoint_hash) : nlohmann::json(nullptr)}});
    }));

    server.Post("/api/invert", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& m = require_model();
      if (req.body.size() > options.max_upload_bytes) throw HttpError{413, "upload too large"};
      if (req.body.empty()) throw HttpError{400, "expected a PNG request body"};
      const auto img = decode_png(std::vector<uint8_t>(req.body.begin(), req.body.end()));
      const int64_t r = m.generator->spec().output_resolution;
      if (img.tensor.size(2) != r || img.tensor.size(3) != r) {
        throw HttpError{400, "image must be " + std::to_string(r) + "x" + std::to_string(r)};
      }
      auto rec = std::make_shared<Record>();
      rec->id = new_id();
      rec->inversion = m.invert(img);
      rec->psnr_x1 = psnr(rec->inversion.x1, img).item<double>();
      rec->psnr_x2 = psnr(rec->inversion.x2, img).item<double>();
      rec->png_x1 = encode_png(rec->inversion.x1);
      rec->png_x2 = encode_png(rec->inversion.x2);
      rec->created_at = timestamp_utc();
      const std::string base = "/api/inversions/" + rec->id + "/image?variant=";
      nlohmann::json j = {{"id", rec->id},
                          {"psnr_x1", rec->psnr_x1},
                          {"psnr_x2", rec->psnr_x2},
                          {"created_at", rec->created_at},
                          {"urls", {{"x1", base + "x1"}, {"x2", base + "x2"}}}};
      store.put(std::move(rec));
      send_json(res, j);
    }));

    server.Get(R"(/api/inversions/([^/]+)/image)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      require_model();
      const auto rec = require_record(req.matches[1]);
      const std::string variant = req.has_param("variant") ? req.get_param_value("variant") : "x2";
      if (variant == "x1") {
        send_png(res, rec->png_x1);
      } else if (variant == "x2") {
        send_png(res, rec->png_x2);
      } else {
        throw HttpError{400, "variant must be x1 or x2"};
      }
    }));

    server.Get("/api/directions", guarded([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& [id, d] : directions) {
        arr.push_back({{"id", id}, {"name", d.name}, {"source", d.source}, {"block_range", {d.block_lo, d.block_hi}}});
      }
      send_json(res, arr);
    }));

    server.Post("/api/edit", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& m = require_model();
      const auto body = parse_body(req);
      const auto id = string_field(body, "id");
      const auto dir_id = string_field(body, "direction_id");
      if (!body.contains("alpha") || !body.at("alpha").is_number()) throw HttpError{400, "alpha must be a number"};
      const double alpha = body.at("alpha").get<double>();
      if (!std::isfinite(alpha) || std::abs(alpha) > kMaxEditStrength) {
        throw HttpError{400, "alpha must lie in [-5, 5]"};
      }
      const auto rec = require_record(id);
      const auto& d = require_direction(dir_id);
      const auto out = edit_image(*m.generator, rec->inversion, d, alpha, m.noise_for(1));
      send_png(res, encode_png(out.image));
    }));

    server.Post("/api/mix", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& m = require_model();
      const auto body = parse_body(req);
      const auto latent_id = string_field(body, "latent_from_id");
      const auto feature_id = string_field(body, "feature_from_id");
      const auto a = require_record(latent_id);
      const auto b = require_record(feature_id);
      send_png(res, encode_png(style_mix(*m.generator, a->inversion, b->inversion, m.noise_for(1))));
    }));

    if (options.static_dir) {
      if (!server.set_mount_point("/", options.static_dir->string())) {
        throw IoError("static directory '" + options.static_dir->string() + "' does not exist");
      }
    }
  }
};

InversionService::InversionService(std::optional<InversionModel> model,
                                   std::vector<std::pair<std::string, EditDirection>> directions,
                                   ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(directions), std::move(options))) {
  if (impl_->model) {
    for (const auto& [id, d] : impl_->directions) {
      if (d.per_block.size(0) != impl_->model->generator->spec().n_layers() ||
          d.per_block.size(1) != impl_->model->generator->spec().w_dim) {
        throw ConfigError("direction '" + id + "' does not match the model's W+ shape");
      }
    }
  }
}

InversionService::~InversionService() { stop(); }

int InversionService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void InversionService::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void InversionService::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

size_t InversionService::stored_records() const { return impl_->store.size(); }

}  // namespace fse
