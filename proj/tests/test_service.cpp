#include "fse/data.hpp"
#include "fse/image_io.hpp"
#include "fse/metrics.hpp"
#include "fse/service.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <fstream>
#include <future>

using namespace fse;
using testing_util::TempDir;

namespace {

InversionModel tiny_model() { return InversionModel::from_archive(testing_util::tiny_model_archive()); }

std::vector<std::pair<std::string, EditDirection>> one_direction(const InversionModel& m) {
  const auto& s = m.generator->spec();
  return {{"hue", EditDirection::uniform("hue", "manual", s.n_layers(), 1, s.n_layers(),
                                         torch::ones({s.w_dim}, torch::kFloat64))}};
}

std::string png_body(int res, uint64_t seed) {
  const auto bytes = encode_png(render_procedural(sample_attributes(seed), res));
  return {bytes.begin(), bytes.end()};
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = tiny_model();
    service_ = std::make_unique<InversionService>(model_, one_direction(model_), options());
    port_ = service_->start("127.0.0.1", 0);
  }
  void TearDown() override { service_->stop(); }
  virtual ServiceOptions options() const {
    ServiceOptions o;
    o.store_capacity = 3;
    o.max_upload_bytes = 64 << 10;
    return o;
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }
  std::string invert(uint64_t seed) {
    auto res = client().Post("/api/invert", png_body(16, seed), "image/png");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 200) << res->body;
    return nlohmann::json::parse(res->body).at("id");
  }

  InversionModel model_;
  std::unique_ptr<InversionService> service_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, Health) {
  auto res = client().Get("/api/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto j = nlohmann::json::parse(res->body);
  EXPECT_EQ(j.at("status"), "ok");
  EXPECT_EQ(j.at("checkpoint_hash"), model_.checkpoint_hash);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, InvertReturnsIdsAndImages) {
  auto res = client().Post("/api/invert", png_body(16, 4), "image/png");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const auto j = nlohmann::json::parse(res->body);
  for (const char* k : {"id", "psnr_x1", "psnr_x2", "created_at", "urls"}) EXPECT_TRUE(j.contains(k)) << k;
  // Same numbers as inverting in-process.
  const auto img = decode_png(encode_png(render_procedural(sample_attributes(4), 16)));
  const auto inv = model_.invert(img);
  EXPECT_DOUBLE_EQ(j.at("psnr_x2").get<double>(), psnr(inv.x2, img).item<double>());

  auto x2 = client().Get(j.at("urls").at("x2").get<std::string>());
  ASSERT_TRUE(x2);
  EXPECT_EQ(x2->status, 200);
  EXPECT_EQ(x2->get_header_value("Content-Type"), "image/png");
  const auto expect = encode_png(inv.x2);
  EXPECT_EQ(x2->body, std::string(expect.begin(), expect.end()));
  auto def = client().Get("/api/inversions/" + j.at("id").get<std::string>() + "/image");
  EXPECT_EQ(def->body, x2->body);
  auto x1 = client().Get(j.at("urls").at("x1").get<std::string>());
  EXPECT_NE(x1->body, x2->body);
  EXPECT_EQ(client().Get("/api/inversions/" + j.at("id").get<std::string>() + "/image?variant=x3")->status, 400);
}

TEST_F(ServiceTest, InvertRejectsBadUploads) {
  auto c = client();
  EXPECT_EQ(c.Post("/api/invert", "", "image/png")->status, 400);
  EXPECT_EQ(c.Post("/api/invert", "garbage", "image/png")->status, 400);
  EXPECT_EQ(c.Post("/api/invert", png_body(32, 1), "image/png")->status, 400);
  const auto big = c.Post("/api/invert", std::string(100 << 10, 'x'), "image/png");
  ASSERT_TRUE(big);
  EXPECT_EQ(big->status, 413);
  EXPECT_TRUE(nlohmann::json::parse(big->body).contains("error"));
}

TEST_F(ServiceTest, Directions) {
  auto res = client().Get("/api/directions");
  const auto j = nlohmann::json::parse(res->body);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].at("id"), "hue");
  EXPECT_EQ(j[0].at("source"), "manual");
  EXPECT_EQ(j[0].at("block_range"), nlohmann::json::array({1, model_.generator->spec().n_layers()}));
}

TEST_F(ServiceTest, ZeroEditAndSelfMixEqualPreview) {
  const auto id = invert(2);
  auto c = client();
  const auto preview = c.Get("/api/inversions/" + id + "/image?variant=x2")->body;
  auto edit = c.Post("/api/edit", nlohmann::json{{"id", id}, {"direction_id", "hue"}, {"alpha", 0}}.dump(),
                     "application/json");
  ASSERT_EQ(edit->status, 200) << edit->body;
  EXPECT_EQ(edit->body, preview);
  auto mix = c.Post("/api/mix", nlohmann::json{{"latent_from_id", id}, {"feature_from_id", id}}.dump(),
                    "application/json");
  ASSERT_EQ(mix->status, 200);
  EXPECT_EQ(mix->body, preview);
  auto moved = c.Post("/api/edit", nlohmann::json{{"id", id}, {"direction_id", "hue"}, {"alpha", 4}}.dump(),
                      "application/json");
  EXPECT_EQ(moved->status, 200);
  EXPECT_NE(moved->body, preview);
}

TEST_F(ServiceTest, EditErrors) {
  const auto id = invert(2);
  auto c = client();
  auto post = [&](const nlohmann::json& j) { return c.Post("/api/edit", j.dump(), "application/json")->status; };
  EXPECT_EQ(post({{"id", id}, {"direction_id", "hue"}, {"alpha", 5.5}}), 400);
  EXPECT_EQ(post({{"id", id}, {"direction_id", "hue"}, {"alpha", "1"}}), 400);
  EXPECT_EQ(post({{"id", id}, {"direction_id", "hue"}}), 400);
  EXPECT_EQ(post({{"id", "ffff"}, {"direction_id", "hue"}, {"alpha", 1}}), 404);
  EXPECT_EQ(post({{"id", id}, {"direction_id", "age"}, {"alpha", 1}}), 404);
  EXPECT_EQ(c.Post("/api/edit", "{not json", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/api/mix", R"({"latent_from_id": "a"})", "application/json")->status, 400);
  EXPECT_EQ(c.Get("/api/inversions/ffff/image")->status, 404);
}

TEST_F(ServiceTest, StoreEvictsLeastRecentlyUsed) {
  const auto a = invert(1), b = invert(2), c = invert(3);
  EXPECT_EQ(service_->stored_records(), 3u);
  // Touch a so that b becomes the oldest.
  EXPECT_EQ(client().Get("/api/inversions/" + a + "/image")->status, 200);
  invert(4);
  EXPECT_EQ(service_->stored_records(), 3u);
  EXPECT_EQ(client().Get("/api/inversions/" + b + "/image")->status, 404);
  EXPECT_EQ(client().Get("/api/inversions/" + a + "/image")->status, 200);
  EXPECT_EQ(client().Get("/api/inversions/" + c + "/image")->status, 200);
}

TEST_F(ServiceTest, CorsPreflight) {
  auto res = client().Options("/api/edit");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, ConcurrentEditsAreIdentical) {
  const auto id = invert(6);
  const auto body = nlohmann::json{{"id", id}, {"direction_id", "hue"}, {"alpha", 2.5}}.dump();
  std::vector<std::future<std::pair<int, std::string>>> futures;
  for (int i = 0; i < 100; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      auto res = client().Post("/api/edit", body, "application/json");
      return res ? std::make_pair(res->status, res->body) : std::make_pair(-1, httplib::to_string(res.error()));
    }));
  }
  std::string first;
  for (auto& f : futures) {
    const auto [status, png] = f.get();
    EXPECT_EQ(status, 200);
    if (first.empty()) first = png;
    EXPECT_EQ(png, first);
  }
}

TEST(Service, NoModelMode) {
  InversionService s(std::nullopt, {});
  const int port = s.start("127.0.0.1", 0);
  httplib::Client c("127.0.0.1", port);
  EXPECT_EQ(nlohmann::json::parse(c.Get("/api/health")->body).at("status"), "no_model");
  EXPECT_EQ(c.Post("/api/invert", png_body(16, 1), "image/png")->status, 503);
  EXPECT_EQ(c.Get("/api/directions")->status, 200);
  s.stop();
}

TEST(Service, StaticFilesAndMismatchedDirections) {
  TempDir dir("static");
  std::ofstream(dir / "index.html") << "<html></html>";
  ServiceOptions o;
  o.static_dir = dir.path();
  InversionService s(std::nullopt, {}, o);
  const int port = s.start("127.0.0.1", 0);
  httplib::Client c("127.0.0.1", port);
  EXPECT_EQ(c.Get("/index.html")->body, "<html></html>");
  s.stop();

  const auto m = tiny_model();
  std::vector<std::pair<std::string, EditDirection>> bad{
      {"x", EditDirection::uniform("x", "manual", 3, 1, 1, torch::ones({2}, torch::kFloat64))}};
  EXPECT_THROW(InversionService(m, bad), ConfigError);
}

TEST(Service, LoadsDirectionFolder) {
  TempDir dir("dirs");
  const auto d = EditDirection::uniform("a", "manual", 7, 1, 2, torch::ones({8}, torch::kFloat64));
  auto write = [&](const std::string& name, const nlohmann::json& j) { std::ofstream(dir / name) << j.dump(); };
  write("single.json", d);
  write("multi.json", directions_to_json({d, d}));
  const auto loaded = load_direction_dir(dir.path());
  std::vector<std::string> ids;
  for (const auto& [id, _] : loaded) ids.push_back(id);
  EXPECT_EQ(ids, (std::vector<std::string>{"multi/0", "multi/1", "single"}));
}
