#pragma once

#include "fse/editing.hpp"
#include "fse/model.hpp"

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fse {

struct ServiceOptions {
  size_t store_capacity = 64;
  size_t max_upload_bytes = 4u << 20;
  std::optional<std::filesystem::path> static_dir;  // served at "/"
  std::string cors_origin = "*";
};

// Directions are exposed under ids "<file stem>" or "<file stem>/<index>" for multi-direction files.
std::vector<std::pair<std::string, EditDirection>> load_direction_dir(const std::filesystem::path& dir);

// REST API over one immutable model:
//   GET  /api/health                        {status, checkpoint_hash}
//   POST /api/invert           (PNG body)   {id, psnr_x1, psnr_x2, urls}
//   GET  /api/inversions/{id}/image?variant=x1|x2
//   GET  /api/directions                    [{id, name, source, block_range}]
//   POST /api/edit   {id, direction_id, alpha}          PNG
//   POST /api/mix    {latent_from_id, feature_from_id}  PNG
// Errors are JSON {"error": ...} with 400, 404, 413 or 503.
class InversionService {
 public:
  InversionService(std::optional<InversionModel> model, std::vector<std::pair<std::string, EditDirection>> directions,
                   ServiceOptions options = {});
  ~InversionService();
  InversionService(const InversionService&) = delete;
  InversionService& operator=(const InversionService&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

  size_t stored_records() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fse
