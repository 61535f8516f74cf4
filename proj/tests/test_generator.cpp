#include "fse/checkpoint.hpp"
#include "fse/generator.hpp"
#include "fse/model.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace fse;
using testing_util::bit_equal;
using testing_util::max_abs_diff;
using testing_util::random_w;
using testing_util::tiny_spec;

TEST(GeneratorSpec, LayerCountFollowsResolution) {
  GeneratorSpec s;
  EXPECT_EQ(s.n_layers(), 7);
  s.output_resolution = 64;
  EXPECT_EQ(s.n_layers(), 9);
  s.output_resolution = 8;
  EXPECT_EQ(s.n_layers(), 3);
}

TEST(GeneratorSpec, ResolutionAndChannelSchedule) {
  GeneratorSpec s;
  const int res[] = {4, 8, 8, 16, 16, 32, 32};
  const int ch[] = {128, 64, 64, 32, 32, 32, 32};
  for (int l = 1; l <= 7; ++l) {
    EXPECT_EQ(s.layer_resolution(l), res[l - 1]) << "layer " << l;
    EXPECT_EQ(s.layer_out_channels(l), ch[l - 1]) << "layer " << l;
    EXPECT_EQ(s.layer_upsamples(l), l % 2 == 0 && l >= 2);
  }
}

TEST(GeneratorSpec, FeatureShapeIsInputOfLayerK) {
  GeneratorSpec s;
  const auto f5 = s.feature_shape(5);
  EXPECT_EQ(f5[0], s.layer_out_channels(4));
  EXPECT_EQ(f5[1], s.layer_resolution(4));
  EXPECT_EQ(f5[2], s.layer_resolution(4));
  const auto f4 = s.feature_shape(4);
  EXPECT_EQ(f4[1], 8);  // upsampling happens inside layer 4
}

TEST(GeneratorSpec, ValidateRejectsBadValues) {
  GeneratorSpec s;
  s.output_resolution = 24;
  EXPECT_THROW(s.validate(), ConfigError);
  s = GeneratorSpec{};
  s.k_inject = 8;
  EXPECT_THROW(s.validate(), ConfigError);
  s.k_inject = 1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(GeneratorSpec, JsonRoundTrip) {
  auto s = tiny_spec(32, 4);
  s.noise_enabled = false;
  const auto back = nlohmann::json(s).get<GeneratorSpec>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(s));
}

TEST(Generator, OutputShapeAndRange) {
  Generator g(tiny_spec(), 3);
  const auto w = random_w(g->spec(), 2, 1);
  const auto x = g->synthesize(w, g->random_noise(2, 5)).tensor;
  EXPECT_EQ(x.sizes(), (std::vector<int64_t>{2, 3, 16, 16}));
  EXPECT_LE(x.abs().max().item<double>(), 1.0);
}

TEST(Generator, SameSeedSameWeights) {
  Generator a(tiny_spec(), 11), b(tiny_spec(), 11), c(tiny_spec(), 12);
  EXPECT_EQ(parameter_hash(*a), parameter_hash(*b));
  EXPECT_NE(parameter_hash(*a), parameter_hash(*c));
}

TEST(Generator, MappingProducesWDim) {
  Generator g(tiny_spec(), 0);
  const auto w = g->map_latent(g->random_z(5, 1));
  EXPECT_EQ(w.sizes(), (std::vector<int64_t>{5, 8}));
  const auto wp = g->broadcast_w(w);
  EXPECT_EQ(wp.n_layers(), g->spec().n_layers());
  for (int l = 1; l <= wp.n_layers(); ++l) EXPECT_TRUE(bit_equal(wp.block(l), w));
}

TEST(Generator, TraceMatchesSynthesis) {
  Generator g(tiny_spec(), 2);
  const auto w = random_w(g->spec(), 2, 3);
  const auto noise = g->random_noise(2, 4);
  const auto trace = g->synthesize_traced(w, noise);
  EXPECT_TRUE(bit_equal(trace.image.tensor, g->synthesize(w, noise).tensor));
  ASSERT_EQ(static_cast<int>(trace.layer_inputs.size()), g->spec().n_layers());
  EXPECT_TRUE(bit_equal(trace.layer_inputs[g->spec().k_inject - 1], g->extract_features_at_k(w, noise).tensor));
}

TEST(Generator, FeatureShapeChecked) {
  Generator g(tiny_spec(), 2);
  const auto w = random_w(g->spec(), 1, 3);
  EXPECT_THROW(g->synthesize_with_feature(w, {torch::zeros({1, 3, 4, 4})}, g->zero_noise(1)), ShapeError);
}

TEST(Generator, BadNoiseRejected) {
  Generator g(tiny_spec(), 2);
  const auto w = random_w(g->spec(), 2, 3);
  auto noise = g->random_noise(2, 1);
  noise.maps.pop_back();
  EXPECT_THROW(g->synthesize(w, noise), ShapeError);
}

TEST(Generator, BatchOneNoiseBroadcasts) {
  Generator g(tiny_spec(), 2);
  const auto w = random_w(g->spec(), 3, 3);
  const auto n1 = g->random_noise(1, 9);
  NoiseBundle n3;
  for (const auto& m : n1.maps) n3.maps.push_back(m.expand({3, -1, -1, -1}).contiguous());
  EXPECT_LE(max_abs_diff(g->synthesize(w, n1).tensor, g->synthesize(w, n3).tensor), 1e-6);
}

TEST(Generator, NonFiniteInputNamesLayer) {
  Generator g(tiny_spec(), 2);
  auto w = random_w(g->spec(), 1, 3);
  w.blocks.select(1, 1).fill_(std::numeric_limits<float>::infinity());  // block 2
  try {
    g->synthesize(w, g->zero_noise(1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), 2);
  }
}

TEST(Generator, NoiseChangesOutputOnlyWhenEnabled) {
  auto s = tiny_spec();
  Generator g(s, 2);
  const auto w = random_w(s, 1, 3);
  EXPECT_GT(max_abs_diff(g->synthesize(w, g->random_noise(1, 1)).tensor, g->synthesize(w, g->random_noise(1, 2)).tensor),
            0.0);
  s.noise_enabled = false;
  Generator q(s, 2);
  EXPECT_TRUE(bit_equal(q->synthesize(w, q->random_noise(1, 1)).tensor, q->synthesize(w, q->random_noise(1, 2)).tensor));
}

TEST(Generator, StyleAffineShapes) {
  Generator g(tiny_spec(), 2);
  const auto a = g->style_affine_weights();
  ASSERT_EQ(static_cast<int>(a.size()), g->spec().n_layers());
  for (int l = 1; l <= g->spec().n_layers(); ++l) {
    EXPECT_EQ(a[l - 1].sizes(), (std::vector<int64_t>{g->spec().layer_out_channels(l), g->spec().w_dim}));
  }
}

TEST(Generator, MeanWIsDeterministic) {
  Generator g(tiny_spec(), 2);
  EXPECT_TRUE(bit_equal(g->mean_w(500, 1), g->mean_w(500, 1)));
  EXPECT_EQ(g->mean_w(500, 1).sizes(), (std::vector<int64_t>{8}));
}

TEST(Generator, ChangingKKeepsParameters) {
  Generator g(tiny_spec(32, 5), 2);
  const auto before = parameter_hash(*g);
  g->set_k_inject(3);
  EXPECT_EQ(parameter_hash(*g), before);
  EXPECT_EQ(g->spec().k_inject, 3);
  EXPECT_THROW(g->set_k_inject(99), ConfigError);
}

// Property: for random specs, continuing from G^K(w) reproduces the full synthesis and ignores
// every block below K.
TEST(GeneratorProperty, SubstitutionAndBlocksBelowK) {
  std::mt19937_64 rng(20240611);
  for (int draw = 0; draw < 60; ++draw) {
    const auto spec = testing_util::random_spec(rng);
    Generator g(spec, rng());
    const auto w = random_w(spec, 2, rng());
    const auto noise = g->random_noise(2, rng());
    const auto f = g->extract_features_at_k(w, noise);
    EXPECT_LE(max_abs_diff(g->synthesize_with_feature(w, f, noise).tensor, g->synthesize(w, noise).tensor), 1e-6)
        << nlohmann::json(spec).dump();
    auto w2 = w.blocks.clone();
    w2.slice(1, 0, spec.k_inject - 1).normal_();
    EXPECT_TRUE(bit_equal(g->synthesize_with_feature({w2}, f, noise).tensor,
                          g->synthesize_with_feature(w, f, noise).tensor));
  }
}

TEST(GeneratorCheckpoint, StoreLoadPreservesOutputs) {
  Generator g(tiny_spec(32, 4), 7);
  CheckpointArchive a;
  store_generator(a, *g);
  const auto back = load_generator(CheckpointArchive::deserialize(a.serialize()));
  EXPECT_EQ(nlohmann::json(back->spec()), nlohmann::json(g->spec()));
  const auto w = random_w(g->spec(), 2, 1);
  const auto n = g->random_noise(2, 1);
  EXPECT_TRUE(bit_equal(back->synthesize(w, n).tensor, g->synthesize(w, n).tensor));
}
