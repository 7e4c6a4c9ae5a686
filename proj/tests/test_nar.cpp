#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "nar/nar.hpp"
#include "test_util.hpp"

using namespace nar;
using nar::testing::space;

namespace {

SearchConfig base_config(SearchMode mode, int updates = 30) {
  SearchConfig c;
  const SearchSpaceSpec s(OperatorVocabulary::face_four(), 5);
  c.space = s.with_frozen(residual_skips(s.topology()));
  c.mode = mode;
  c.oracle = {{"kind", "tabular"}, {"seed", 7}, {"interactions", 3}};
  c.hidden = 12;
  c.updates = updates;
  c.batch_size = 8;
  c.block = 10;
  c.lr = 0.01;
  c.seed = 5;
  return c;
}

void expect_same_trajectory(const SearchResult& a, const SearchResult& b) {
  EXPECT_EQ(a.best_arch, b.best_arch);
  EXPECT_EQ(a.best_reward, b.best_reward);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].mean_reward, b.history[i].mean_reward);
    EXPECT_EQ(a.history[i].best_so_far, b.history[i].best_so_far);
  }
  EXPECT_EQ(a.evaluated, b.evaluated);
}

}  // namespace

TEST(Config, Parsing) {
  const nlohmann::json j = {{"mode", "nar_fixed_skip"},
                            {"seed", 3},
                            {"space", {{"n_nodes", 4}, {"operators", "face4"}, {"frozen_skips", "residual"}}},
                            {"oracle", {{"kind", "tabular"}, {"seed", 1}}},
                            {"controller", {{"hidden", 16}}},
                            {"search", {{"updates", 12}, {"batch_size", 4}}}};
  const auto c = search_config_from_json(j);
  EXPECT_EQ(c.mode, SearchMode::NarFixedSkip);
  EXPECT_EQ(c.hidden, 16);
  EXPECT_EQ(c.updates, 12);
  EXPECT_EQ(c.block, 100);
  const auto again = search_config_from_json(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));

  auto bad = j;
  bad["space"]["frozen_skips"] = nullptr;
  EXPECT_THROW(search_config_from_json(bad), ConfigError);
  bad = j;
  bad["search"]["block"] = 0;
  EXPECT_THROW(search_config_from_json(bad), ConfigError);
  bad = j;
  bad["mode"] = "random";
  EXPECT_THROW(search_config_from_json(bad), ConfigError);
  bad = j;
  bad["oracle"] = {{"kind", "crystal_ball"}};
  EXPECT_THROW(search_config_from_json(bad), ConfigError);
  bad = j;
  bad["search"]["batch_size"] = "many";
  EXPECT_THROW(search_config_from_json(bad), ConfigError);
  bad = j;
  bad.erase("space");
  EXPECT_THROW(search_config_from_json(bad), ConfigError);
}

TEST(NarSearch, ZeroUpdatesReturnsInitialArgmax) {
  const auto c = base_config(SearchMode::NarFixedSkip, 0);
  const auto r = nar_search(c, 1);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_arch, r.derived_arch);
  const auto initial = init_controller({c.hidden, 4, 5, SamplingMode::FixedSkip}, derive_seed(c.seed, {0x6374726c}));
  EXPECT_EQ(r.derived_arch, greedy_rollout(initial, c.space, {SamplingMode::FixedSkip, {}}).arch);
  EXPECT_EQ(r.derived_arch.skips, *c.space.frozen_skips());
}

TEST(NarSearch, RespectsFrozenMask) {
  const auto c = base_config(SearchMode::NarFixedSkip);
  const auto r = nar_search(c, 2);
  ASSERT_EQ(r.evaluated.size(), 30u * 8u);
  for (const auto& a : r.evaluated) EXPECT_EQ(a.skips, *c.space.frozen_skips());
  EXPECT_EQ(r.best_arch.skips, *c.space.frozen_skips());
  for (const auto& h : r.history) EXPECT_EQ(h.skip_grad_norm, 0.0);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_GE(r.history[i].best_so_far, r.history[i - 1].best_so_far);
  EXPECT_THROW(joint_search(c), ConfigError);
}

TEST(AlternatingSearch, SinglePhaseEqualsNar) {
  auto alt = base_config(SearchMode::Alternating);
  alt.block = alt.updates;
  const auto a = alternating_search(alt, 1);
  const auto n = nar_search(base_config(SearchMode::NarFixedSkip), 1);
  expect_same_trajectory(a, n);
  ASSERT_EQ(a.phases.size(), 1u);
  EXPECT_EQ(a.phases[0].kind, 'O');
}

TEST(AlternatingSearch, IncumbentMonotone) {
  auto c = base_config(SearchMode::Alternating, 60);
  c.oracle = {{"kind", "proxy"}, {"base", {{"kind", "tabular"}, {"seed", 2}}}, {"sigma0", 0.2}, {"seed", 1}};
  const auto r = alternating_search(c, 1);
  ASSERT_EQ(r.phases.size(), 6u);
  for (std::size_t p = 0; p < r.phases.size(); ++p) {
    EXPECT_EQ(r.phases[p].kind, p % 2 ? 'S' : 'O');
    if (p) {
      EXPECT_GE(r.phases[p].incumbent_reward, r.phases[p - 1].incumbent_reward);
    }
  }
  // O-phases keep the incumbent's skips; S-phases keep its operators.
  for (const auto& h : r.history) {
    const auto& p = r.phases[static_cast<std::size_t>(h.step / c.block)];
    EXPECT_EQ(h.phase, p.kind);
  }
  for (std::size_t p = 1; p < r.phases.size(); ++p) {
    const auto& prev = r.phases[p - 1].incumbent;
    for (int q = 0; q < c.block * c.batch_size; ++q) {
      const auto& a = r.evaluated[static_cast<std::size_t>(p * c.block * c.batch_size + q)];
      if (r.phases[p].kind == 'O') {
        EXPECT_EQ(a.skips, prev.skips);
      } else {
        EXPECT_EQ(a.ops, prev.ops);
      }
    }
  }
}

TEST(AlternatingSearch, NoEdgesMatchesJoint) {
  auto c = base_config(SearchMode::Alternating);
  c.space = space(2, 2);
  const auto a = alternating_search(c, 1);
  c.mode = SearchMode::Joint;
  const auto j = joint_search(c, 1);
  expect_same_trajectory(a, j);
  EXPECT_EQ(a.derived_arch, j.derived_arch);
  for (const auto& p : a.phases) EXPECT_EQ(p.kind, 'O');
}

TEST(JointSearch, IgnoresFrozenMaskAndLogsBothHeads) {
  const auto r = joint_search(base_config(SearchMode::Joint), 1);
  bool varied = false;
  for (const auto& a : r.evaluated) varied = varied || a.skips != r.evaluated.front().skips;
  EXPECT_TRUE(varied);
  double skip_total = 0.0;
  for (const auto& h : r.history) skip_total += h.skip_grad_norm;
  EXPECT_GT(skip_total, 0.0);
}

TEST(Search, DeterministicAcrossWorkers) {
  for (auto mode : {SearchMode::NarFixedSkip, SearchMode::Alternating, SearchMode::Joint}) {
    auto c = base_config(mode, 20);
    c.oracle = {{"kind", "proxy"}, {"base", {{"kind", "tabular"}, {"seed", 4}}}, {"seed", 2}};
    const auto a = to_json(run_search(c, 1)).dump();
    const auto b = to_json(run_search(c, 4)).dump();
    EXPECT_EQ(a, b) << to_string(mode);
  }
}

TEST(Search, ResultJsonShape) {
  const auto j = to_json(run_search(base_config(SearchMode::Alternating, 20), 1));
  for (const char* key : {"mode", "best_arch", "best_reward", "derived_arch", "history", "phases"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.at("history").size(), 20u);
  EXPECT_EQ(j.at("mode"), "alternating");
}

TEST(ExactAscent, FixedPointAtOptimum) {
  const auto s = space(4, 3);
  const auto t = generate_tabular(s, {3, 1.0, 0.5, 4, 0.5});
  const auto best = enumerate_optimum(t, s);
  const auto trace = exact_alternating_ascent(t, s, best.best_arch);
  ASSERT_EQ(trace.steps.size(), 1u);
  EXPECT_EQ(trace.steps[0].phase, 'I');
  EXPECT_EQ(trace.steps[0].arch, best.best_arch);
  EXPECT_EQ(trace.phases_run, 2);
}

TEST(ExactAscent, MonotoneOnRandomInstances) {
  const auto s = space(5, 3);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto t = generate_tabular(s, {static_cast<std::uint64_t>(i), 1.0, 0.5, 6, 0.5});
    const auto trace = exact_alternating_ascent(t, s, nar::testing::random_arch(s, rng));
    for (std::size_t q = 1; q < trace.steps.size(); ++q) ASSERT_GT(trace.steps[q].reward, trace.steps[q - 1].reward);
    EXPECT_LE(trace.phases_run, 50);
    EXPECT_TRUE(trace.operator_block_enumerated);
    EXPECT_TRUE(trace.skip_block_enumerated);
    // Terminal arch: no single block change improves it.
    const auto& last = trace.steps.back();
    const auto ops_best = enumerate_optimum(t, s.with_frozen(last.arch.skips));
    EXPECT_LE(ops_best.best_reward, last.reward);
  }
}

TEST(ExactAscent, SeparableConvergesInOneOperatorPhase) {
  const auto s = space(5, 3);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    auto t = generate_tabular(s, {static_cast<std::uint64_t>(100 + i), 1.0, 0.0, 0, 0.5});
    const auto best = enumerate_optimum(t, s);
    auto init = nar::testing::random_arch(s, rng);
    const auto trace = exact_alternating_ascent(t, s, init);
    ASSERT_LE(trace.steps.size(), 2u);
    EXPECT_EQ(trace.steps.back().reward, best.best_reward);
    if (trace.steps.size() == 2) {
      EXPECT_EQ(trace.steps[1].phase, 'O');
    }
  }
}

TEST(ExactAscent, GreedyFallbackOnLargeBlocks) {
  const SearchSpaceSpec s(OperatorVocabulary::default_six(), 12);
  const auto t = generate_tabular(s, {5, 1.0, 0.5, 10, 0.5});
  Rng rng(3);
  const auto trace = exact_alternating_ascent(t, s, nar::testing::random_arch(s, rng));
  EXPECT_FALSE(trace.operator_block_enumerated);
  EXPECT_FALSE(trace.skip_block_enumerated);
  for (std::size_t q = 1; q < trace.steps.size(); ++q) EXPECT_GT(trace.steps[q].reward, trace.steps[q - 1].reward);
  // Coordinate-wise local optimum.
  const auto last = trace.steps.back();
  TabularOracle o(t);
  for (int j = 0; j < 12; ++j)
    for (int k = 0; k < 6; ++k) {
      auto c = last.arch;
      c.ops[j] = k;
      EXPECT_LE(o.evaluate(c, 0), last.reward);
    }
  for (int e = 0; e < s.edge_count(); ++e) {
    auto c = last.arch;
    c.skips[e] ^= 1;
    EXPECT_LE(o.evaluate(c, 0), last.reward);
  }
}

TEST(ExactAscent, TraceCsv) {
  const auto s = space(4, 2);
  const auto t = generate_tabular(s, {1, 1.0, 0.5, 2, 0.5});
  const auto trace = exact_alternating_ascent(t, s, {{0, 0, 0, 0}, {0, 0, 0}});
  const auto path = std::filesystem::temp_directory_path() / "nar_trace_test.csv";
  write_trace_csv({trace, trace}, path, true);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "instance,phase,arch,reward");
  EXPECT_EQ(first.substr(0, 4), "0,I,");
  int rows = 1;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, static_cast<int>(2 * trace.steps.size()));
  write_trace_csv({trace}, path, false);
  std::ifstream in2(path);
  std::getline(in2, header);
  EXPECT_EQ(header, "phase,arch,reward");
  std::filesystem::remove(path);
}
