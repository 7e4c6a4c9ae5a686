#include <gtest/gtest.h>

#include "nar/experiments.hpp"
#include "test_util.hpp"

using namespace nar;

namespace {

SearchSpaceSpec face_residual(int n) {
  const SearchSpaceSpec s(OperatorVocabulary::face_four(), n);
  return s.with_frozen(residual_skips(s.topology()));
}

}  // namespace

TEST(Seeds, OffsetEverySeedField) {
  const nlohmann::json j = {{"seed", 1}, {"base", {{"seed", 10}, {"x", 3}}}, {"list", {{{"seed", 5}}}}};
  const auto k = offset_seeds(j, 4);
  EXPECT_EQ(k["seed"], 5);
  EXPECT_EQ(k["base"]["seed"], 14);
  EXPECT_EQ(k["base"]["x"], 3);
  EXPECT_EQ(k["list"][0]["seed"], 9);

  SearchConfig c;
  c.seed = 100;
  c.oracle = {{"kind", "tabular"}, {"seed", 7}};
  const auto r = replicate(c, 3);
  EXPECT_EQ(r.seed, 103u);
  EXPECT_EQ(r.oracle["seed"], 10);
}

TEST(SeriesStats, Values) {
  const auto s = series_stats({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.variance, 5.0 / 3.0);
}

TEST(Gradcheck, DefaultsPassAndTightToleranceFails) {
  GradcheckSettings g;
  g.points = 4;
  const auto space = face_residual(5);
  const auto reports = run_gradcheck(space, g, 1);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].mode, SamplingMode::Joint);
  EXPECT_EQ(reports[1].mode, SamplingMode::FixedSkip);
  for (const auto& r : reports) {
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.point_errors.size(), 4u);
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
  g.tolerance = 1e-12;
  for (const auto& r : run_gradcheck(space, g, 1)) EXPECT_FALSE(r.pass);

  const auto parsed = gradcheck_from_json({{"points", 3}, {"modes", {"joint"}}, {"arithmetic", "double"}});
  EXPECT_EQ(parsed.points, 3);
  EXPECT_EQ(parsed.modes.size(), 1u);
  EXPECT_EQ(parsed.arithmetic, FdArithmetic::Double);
  EXPECT_THROW(gradcheck_from_json({{"h", -1.0}}), ConfigError);
  EXPECT_THROW(gradcheck_from_json({{"modes", {"sideways"}}}), ConfigError);
}

TEST(Demos, AscentVerdict) {
  const auto s = nar::testing::space(5, 3);
  const auto r = ascent_demo(s, {0, 1.0, 0.5, 6, 0.5}, 100, 50, 1);
  EXPECT_EQ(r.traces.size(), 100u);
  EXPECT_EQ(r.monotone, 100);
  EXPECT_EQ(r.terminated, 100);
  EXPECT_LE(r.max_phases_seen, 50);
  EXPECT_EQ(to_json(r).at("verdict"), "monotone: 100/100");
}

TEST(Demos, GradNoiseSmall) {
  SearchConfig c;
  c.space = nar::testing::space(5, 3);
  c.mode = SearchMode::Joint;
  c.oracle = {{"kind", "proxy"}, {"base", {{"kind", "tabular"}, {"seed", 1}}}, {"beta0", 0.0}, {"seed", 2}};
  c.hidden = 8;
  c.updates = 15;
  c.batch_size = 4;
  const auto r = grad_noise_demo(c, 2, 1);
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.runs[0].log.records.size(), 15u);
  EXPECT_NE(r.runs[0].seed, r.runs[1].seed);
  c.mode = SearchMode::NarFixedSkip;
  EXPECT_THROW(grad_noise_demo(c, 1, 1), ConfigError);
}

TEST(Demos, BiasSmall) {
  SearchConfig c;
  c.space = face_residual(5);
  c.mode = SearchMode::Joint;
  c.oracle = {{"kind", "proxy"}, {"base", {{"kind", "tabular"}, {"seed", 1}}}, {"beta0", 0.3}, {"seed", 2}};
  c.hidden = 8;
  c.updates = 10;
  c.batch_size = 4;
  const auto r = bias_demo(c, 2, 1);
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.nar_on_mask, 2);
  for (const auto& x : r.runs) EXPECT_DOUBLE_EQ(x.nar_density, x.frozen_density);
  c.oracle = {{"kind", "tabular"}};
  EXPECT_THROW(bias_demo(c, 1, 1), ConfigError);
}

TEST(Demos, PretrainSmall) {
  SearchConfig c;
  c.space = face_residual(3);
  c.mode = SearchMode::NarFixedSkip;
  c.oracle = {{"kind", "supernet"}, {"seed", 1}, {"child_steps", 3}, {"data", {{"seed", 1}}}};
  c.hidden = 8;
  c.updates = 3;
  c.batch_size = 2;
  const auto r = pretrain_demo(c, 2, 2, 1);
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.runs[0].pretrain_losses.size(), 3u);
  EXPECT_GT(r.runs[0].entropy_with, 0.0);
  EXPECT_THROW(pretrain_demo(c, 0, 1, 1), ConfigError);
}
