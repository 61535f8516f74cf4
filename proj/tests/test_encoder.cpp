#include "fse/checkpoint.hpp"
#include "fse/encoder.hpp"
#include "fse/model.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace fse;

TEST(Encoder, StageResolutionsHalve) {
  Encoder e(EncoderSpec{}, 1);
  const auto feats = e->backbone({torch::zeros({2, 3, 32, 32})});
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(feats.stages[i].size(2), 32 >> (i + 1)) << "stage " << i + 1;
    EXPECT_EQ(feats.stages[i].size(1), EncoderSpec{}.block_channels[i]);
  }
  EXPECT_EQ(e->pooled_features(feats).sizes(), (std::vector<int64_t>{2, 32 + 64 + 128 + 256}));
}

TEST(Encoder, OutputsMatchGeneratorShapes) {
  for (int k : {4, 5, 6, 7}) {
    GeneratorSpec g;
    g.k_inject = k;
    Encoder e(EncoderSpec::for_generator(g), 1);
    auto [w, f] = e->encode({torch::randn({3, 3, 32, 32})});
    EXPECT_EQ(w.blocks.sizes(), (std::vector<int64_t>{3, 7, 64}));
    const auto fs = g.feature_shape();
    EXPECT_EQ(f.tensor.sizes(), (std::vector<int64_t>{3, fs[0], fs[1], fs[2]})) << "K=" << k;
  }
}

TEST(Encoder, LatentBiasInitialisedToMeanW) {
  Generator g(testing_util::tiny_spec(16, 3), 5);
  Encoder e(EncoderSpec::for_generator(g->spec()), 1);
  const auto mean = g->mean_w(10000, 1);
  e->init_latent_bias(mean);
  for (int l = 1; l <= g->spec().n_layers(); ++l) EXPECT_TRUE(torch::equal(e->head_bias(l), mean));
  // With small head weights, a blank image encodes close to the mean latent.
  torch::NoGradGuard ng;
  auto [w, f] = e->encode({torch::zeros({1, 3, 16, 16})});
  EXPECT_LT((w.blocks[0] - mean).abs().max().item<double>(), 1.0);
  EXPECT_THROW(e->init_latent_bias(torch::zeros({3})), ShapeError);
}

TEST(Encoder, ParametersStoredUnderPrefix) {
  Encoder e(EncoderSpec::for_generator(testing_util::tiny_spec(16, 3)), 1);
  CheckpointArchive a;
  store_encoder(a, *e);
  EXPECT_FALSE(a.names_with_prefix("encoder/").empty());
  EXPECT_EQ(a.names_with_prefix("encoder/").size(), a.tensors().size());
  const auto back = load_encoder(a);
  const auto x = torch::randn({1, 3, 16, 16});
  torch::NoGradGuard ng;
  EXPECT_TRUE(torch::equal(back->encode({x}).first.blocks, e->encode({x}).first.blocks));
}

TEST(Encoder, RejectsBadSpec) {
  EncoderSpec s;
  s.input_resolution = 12;
  EXPECT_THROW(Encoder(s, 0), ConfigError);
}

TEST(Encoder, SeedDeterminesWeights) {
  const auto spec = EncoderSpec::for_generator(testing_util::tiny_spec(16, 3));
  Encoder a(spec, 4), b(spec, 4), c(spec, 5);
  EXPECT_EQ(parameter_hash(*a), parameter_hash(*b));
  EXPECT_NE(parameter_hash(*a), parameter_hash(*c));
}

TEST(Encoder, GradientsReachBothBranches) {
  Encoder e(EncoderSpec::for_generator(testing_util::tiny_spec(16, 3)), 2);
  auto [w, f] = e->encode({torch::randn({2, 3, 16, 16})});
  (w.blocks.pow(2).sum() + f.tensor.pow(2).sum()).backward();
  for (const auto& p : e->named_parameters()) {
    ASSERT_TRUE(p.value().grad().defined()) << p.key();
  }
}
