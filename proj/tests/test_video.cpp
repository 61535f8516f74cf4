#include "fse/image_io.hpp"
#include "fse/video.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace fse;
using testing_util::TempDir;

namespace {

const InversionModel& model() {
  static const auto m = InversionModel::from_archive(testing_util::tiny_model_archive());
  return m;
}

}  // namespace

TEST(Video, ConstantClipHasUnitConsistency) {
  TempDir in("vin"), out("vout");
  const auto frame = render_procedural(sample_attributes(5), 16);
  for (int i = 0; i < 10; ++i) write_png(in / ("f" + std::to_string(i) + ".png"), frame);
  const auto seq = invert_sequence(in.path(), model(), EmbedderSet::desk_default(), out.path(), true);
  ASSERT_EQ(seq.frames.size(), 10u);
  const auto report = sequence_report(seq, *EmbedderSet::desk_default().identity);
  EXPECT_EQ(report.n_frames, 10);
  EXPECT_EQ(report.psnr_per_frame.size(), 10u);
  ASSERT_TRUE(report.ic_source.has_value());
  ASSERT_TRUE(report.ic_inversion.has_value());
  EXPECT_NEAR(*report.ic_source, 1.0, 1e-6);
  EXPECT_NEAR(*report.ic_inversion, 1.0, 1e-6);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(std::filesystem::exists(out / ("f" + std::to_string(i) + ".png")));
  std::ifstream f(out / "frames.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j.at("frames").size(), 10u);
}

TEST(Video, SingleFrameHasNullConsistency) {
  TempDir in("vone");
  write_png(in / "only.png", render_procedural(sample_attributes(1), 16));
  const auto seq = invert_sequence(in.path(), model(), EmbedderSet::desk_default(), std::nullopt, true);
  const auto report = sequence_report(seq, *EmbedderSet::desk_default().identity);
  EXPECT_FALSE(report.ic_inversion.has_value());
  EXPECT_FALSE(report.ic_source.has_value());
  const nlohmann::json j = report;
  EXPECT_TRUE(j.at("ic_inversion").is_null());
  const auto back = j.get<SequenceReport>();
  EXPECT_FALSE(back.ic_source.has_value());
  EXPECT_EQ(back.n_frames, 1);
}

TEST(Video, FramesAreSortedAndMeansMatch) {
  TempDir in("vsort");
  write_procedural_trajectory(in.path(), 5, 16, 3);
  const auto seq = invert_sequence(in.path(), model(), EmbedderSet::desk_default(), std::nullopt, true);
  ASSERT_EQ(seq.frames.size(), 5u);
  EXPECT_EQ(seq.frames.front().file, "frame_0000.png");
  EXPECT_EQ(seq.frames.back().file, "frame_0004.png");
  const auto report = sequence_report(seq, *EmbedderSet::desk_default().identity);
  double sum = 0;
  for (double p : report.psnr_per_frame) sum += p;
  EXPECT_NEAR(report.mean_psnr, sum / 5, 1e-9);
  const nlohmann::json j = report;
  EXPECT_EQ(nlohmann::json(j.get<SequenceReport>()), j);
}

TEST(Video, BadFramesStrictOrSkipped) {
  TempDir in("vbad");
  write_png(in / "a.png", render_procedural(sample_attributes(1), 16));
  write_png(in / "b.png", render_procedural(sample_attributes(2), 32));
  std::ofstream(in / "c.png") << "not a png";
  EXPECT_THROW(invert_sequence(in.path(), model(), EmbedderSet::desk_default(), std::nullopt, true), IoError);
  const auto seq = invert_sequence(in.path(), model(), EmbedderSet::desk_default(), std::nullopt, false);
  EXPECT_EQ(seq.frames.size(), 1u);
  EXPECT_EQ(seq.skipped.size(), 2u);
  EXPECT_EQ(seq.sources.tensor.size(0), 1);
}

TEST(Video, EmptyOrMissingFolder) {
  TempDir in("vempty");
  EXPECT_THROW(invert_sequence(in.path(), model(), EmbedderSet::desk_default(), std::nullopt, false), IoError);
  EXPECT_THROW(invert_sequence(in / "nope", model(), EmbedderSet::desk_default(), std::nullopt, false), IoError);
}

TEST(Video, ZInterpolationEndpointsAreGeneratorSamples) {
  TempDir dir("vz");
  const auto& g = *model().generator;
  write_z_interpolation_video(g, dir.path(), 4, 7, 8, model().eval_noise);
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", i);
    EXPECT_EQ(read_png(dir / name).tensor.size(2), 16);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "frame_0004.png"));
}
