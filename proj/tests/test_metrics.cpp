#include "fse/metrics.hpp"
#include "fse/model.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fse;

TEST(Psnr, KnownValue) {
  const auto a = torch::zeros({2, 3, 8, 8}, torch::kFloat64);
  const auto b = torch::full({2, 3, 8, 8}, 0.1, torch::kFloat64);
  const auto p = psnr({a}, {b});
  EXPECT_EQ(p.scalar_type(), torch::kFloat64);
  // MSE 0.01 with peak-to-peak range 2.
  EXPECT_NEAR(p[0].item<double>(), 10 * std::log10(4.0 / 0.01), 1e-9);
  EXPECT_NEAR(p[1].item<double>(), 26.02, 0.01);
}

TEST(Psnr, IdenticalImagesHitTheCap) {
  const auto a = torch::rand({1, 3, 4, 4});
  EXPECT_EQ(psnr({a}, {a})[0].item<double>(), kPsnrCapDb);
  EXPECT_THROW(psnr({a}, {torch::rand({1, 3, 4, 5})}), ShapeError);
}

TEST(Ssim, MatchesSlidingWindowReference) {
  auto g = make_rng(3);
  for (int res : {11, 16, 24}) {
    const auto a = torch::rand({2, 3, res, res}, g) * 2 - 1;
    const auto b = (a + 0.3 * torch::randn({2, 3, res, res}, g)).clamp(-1, 1);
    const auto got = ssim({a}, {b});
    const auto expect = oracle::ssim_sliding(a, b);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(got[i].item<double>(), expect[i], 1e-6) << res;
  }
}

TEST(Ssim, IdentityIsOneAndSmallImagesRejected) {
  const auto a = torch::rand({1, 3, 16, 16});
  EXPECT_NEAR(ssim({a}, {a})[0].item<double>(), 1.0, 1e-12);
  EXPECT_THROW(ssim({torch::zeros({1, 3, 8, 8})}, {torch::zeros({1, 3, 8, 8})}), ShapeError);
}

TEST(Fid, SameSetIsZero) {
  auto g = make_rng(4);
  const auto s = torch::randn({50, 6}, g, torch::kFloat64);
  EXPECT_LE(std::abs(fid(s, s)), 1e-6);
}

TEST(Fid, MeanShiftIsSquaredNorm) {
  auto g = make_rng(5);
  const auto s = torch::randn({60, 5}, g, torch::kFloat64);
  const auto delta = torch::tensor({0.5, -1.0, 0.25, 2.0, 0.0}, torch::kFloat64);
  EXPECT_NEAR(fid(s, s + delta), delta.pow(2).sum().item<double>(), 1e-6);
}

TEST(Fid, MatchesDenmanBeaversOracle) {
  auto g = make_rng(6);
  const auto r = torch::randn({40, 4}, g, torch::kFloat64);
  const auto f = torch::randn({40, 4}, g, torch::kFloat64) * torch::tensor({1.0, 2.0, 0.5, 1.5}, torch::kFloat64) + 0.3;
  EXPECT_NEAR(fid(r, f), oracle::fid(oracle::to_matrix(r), oracle::to_matrix(f)), 1e-8);
  EXPECT_THROW(fid(r.slice(0, 0, 4), f.slice(0, 0, 4)), ConfigError);
}

TEST(IdentityConsistency, ConstantSequenceIsOne) {
  const auto frame = torch::rand({1, 3, 16, 16}) * 2 - 1;
  const auto seq = frame.expand({10, 3, 16, 16}).contiguous();
  const auto r = EmbedderSet::desk_default().identity;
  EXPECT_NEAR(identity_consistency({seq}, *r), 1.0, 1e-6);
  EXPECT_THROW(identity_consistency({frame}, *r), ConfigError);
}

TEST(IdentityConsistency, AveragesSimilarityToFirstFrame) {
  // With flattened images as embeddings, the value is the mean cosine to frame 0.
  auto seq = torch::zeros({3, 1, 1, 2});
  seq[0][0][0][0] = 1;
  seq[1][0][0][1] = 1;
  seq[2][0][0][0] = 1;
  EXPECT_NEAR(identity_consistency({seq}, oracle::IdentityEmbedder()), 0.5, 1e-12);
}

TEST(StableMean, CompensatesRoundOff) {
  std::vector<double> v{1e16};
  for (int i = 0; i < 1000; ++i) v.push_back(1.0);
  v.push_back(-1e16);
  EXPECT_NEAR(stable_mean(v), 1000.0 / 1002.0, 1e-12);
  EXPECT_EQ(stable_mean(torch::tensor({1.0, 2.0, 3.0})), 2.0);
}

TEST(MetricsReport, CsvAndJson) {
  MetricsReport m;
  m.mse = 0.5;
  m.psnr_db = 12;
  m.n_samples = 3;
  EXPECT_EQ(MetricsReport::csv_header(), "label,n_samples,mse,psnr_db,ssim,lpips,id_similarity,fid");
  const auto row = m.csv_row("D");
  EXPECT_EQ(row.substr(0, 4), "D,3,");
  const nlohmann::json j = m;
  EXPECT_TRUE(j.at("fid").is_null());
  const auto back = j.get<MetricsReport>();
  EXPECT_EQ(back.mse, 0.5);
  EXPECT_FALSE(back.fid.has_value());
}

TEST(ComputeMetrics, PerfectReconstruction) {
  const auto x = torch::rand({4, 3, 16, 16}) * 2 - 1;
  const auto m = compute_metrics({x}, {x}, EmbedderSet::desk_default());
  EXPECT_EQ(m.n_samples, 4);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.psnr_db, kPsnrCapDb);
  EXPECT_NEAR(m.ssim, 1.0, 1e-9);
  EXPECT_NEAR(m.lpips, 0.0, 1e-9);
  EXPECT_NEAR(m.id_similarity, 1.0, 1e-6);
}

TEST(Evaluate, ReportsBothReconstructions) {
  testing_util::TempDir dir("eval");
  const auto ds = ImageDataset::write_procedural(dir.path(), 6, 16, 1, 0);
  Generator g(testing_util::tiny_spec(16, 3), 1);
  Encoder e(EncoderSpec::for_generator(g->spec()), 2);
  const auto noise = g->random_noise(1, kEvalNoiseSeed);
  const auto r = evaluate(*e, *g, ds, EmbedderSet::desk_default(), noise, 4);
  EXPECT_EQ(r.x1.n_samples, 6);
  EXPECT_EQ(r.x2.n_samples, 6);
  EXPECT_GT(r.x1.mse, 0.0);
  const nlohmann::json j = r;
  EXPECT_TRUE(j.contains("x1"));
  EXPECT_TRUE(j.contains("x2"));
}
