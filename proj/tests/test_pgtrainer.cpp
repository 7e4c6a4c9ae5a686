#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "nar/pgtrainer.hpp"
#include "nar/serial.hpp"
#include "test_util.hpp"

using namespace nar;
using nar::testing::space;

namespace {

struct Fixture {
  SearchSpaceSpec spec;
  ControllerParams params;
  SamplingPlan plan;
};

Fixture make_fixture(int n, int k, SamplingMode mode, std::uint64_t seed, int hidden = 6) {
  auto s = space(n, k);
  if (mode == SamplingMode::FixedSkip) s = s.with_frozen(residual_skips(s.topology()));
  ControllerConfig c{hidden, k, n, mode};
  auto p = init_controller(c, seed);
  Rng rng(seed * 7 + 1);
  for (auto& v : p.values()) v = rng.uniform(-1.0, 1.0);
  return {s, p, {mode, {}}};
}

class ArrayOracle : public RewardOracle {
 public:
  explicit ArrayOracle(double fixed) : fixed_(fixed) {}
  double evaluate(const ArchitectureVector&, int) override { return fixed_; }
  bool pure() const override { return true; }

 private:
  double fixed_;
};

class ThrowAt : public RewardOracle {
 public:
  explicit ThrowAt(std::vector<ArchitectureVector> bad) : bad_(std::move(bad)) {}
  double evaluate(const ArchitectureVector& a, int) override {
    for (const auto& b : bad_)
      if (a == b) throw std::runtime_error("boom");
    return 0.5;
  }
  bool pure() const override { return true; }

 private:
  std::vector<ArchitectureVector> bad_;
};

SampleBatch batch_with_rewards(const Fixture& f, int n, std::uint64_t seed, const std::vector<double>& rewards) {
  ArrayOracle zero(0.0);
  Rng rng(seed);
  auto b = collect_batch(f.params, f.spec, f.plan, zero, n, 0, rng, 1);
  for (int i = 0; i < n; ++i) b.samples[i].reward = rewards[static_cast<std::size_t>(i) % rewards.size()];
  return b;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = std::abs(a[c] - b[c]);
    if (d == 0.0) continue;
    worst = std::max(worst, d / std::max(std::abs(a[c]), std::abs(b[c])));
  }
  return worst;
}

}  // namespace

TEST(Reinforce, AllZeroRewardsGiveZeroGradient) {
  const auto f = make_fixture(5, 3, SamplingMode::Joint, 1);
  const auto b = batch_with_rewards(f, 8, 2, {0.0});
  for (double v : reinforce_gradient(f.params, f.spec, b)) EXPECT_EQ(v, 0.0);
  for (double v : ce_surrogate_gradient(f.params, f.spec, b)) EXPECT_EQ(v, 0.0);
}

TEST(Reinforce, RewardEqualToBaselineGivesZero) {
  const auto f = make_fixture(5, 3, SamplingMode::Joint, 2);
  const auto b = batch_with_rewards(f, 8, 3, {0.625});
  BaselineState base{0.625, 0.95, true};
  for (double v : reinforce_gradient(f.params, f.spec, b, base)) EXPECT_EQ(v, 0.0);
}

TEST(Reinforce, TwoSampleComposition) {
  const auto f = make_fixture(4, 3, SamplingMode::Joint, 3);
  const auto b = batch_with_rewards(f, 2, 4, {0.8, 0.3});
  const auto g1 = grad_log_prob(f.params, b.samples[0].arch, f.spec, f.plan);
  const auto g2 = grad_log_prob(f.params, b.samples[1].arch, f.spec, f.plan);
  const auto g = reinforce_gradient(f.params, f.spec, b);
  for (std::size_t c = 0; c < g.size(); ++c) EXPECT_NEAR(g[c], 0.5 * (0.8 * g1[c] + 0.3 * g2[c]), 1e-15);

  BaselineState base{0.5, 0.95, true};
  const auto gb = reinforce_gradient(f.params, f.spec, b, base);
  for (std::size_t c = 0; c < g.size(); ++c) EXPECT_NEAR(gb[c], 0.5 * (0.3 * g1[c] - 0.2 * g2[c]), 1e-15);
}

TEST(Reinforce, SingleSampleUnitReward) {
  const auto f = make_fixture(6, 4, SamplingMode::Joint, 4);
  const auto b = batch_with_rewards(f, 1, 5, {1.0});
  EXPECT_EQ(reinforce_gradient(f.params, f.spec, b), grad_log_prob(f.params, b.samples[0].arch, f.spec, f.plan));
}

TEST(Reinforce, UninitializedBaselineIsZero) {
  const auto f = make_fixture(4, 3, SamplingMode::Joint, 5);
  const auto b = batch_with_rewards(f, 4, 6, {0.2, 0.9});
  EXPECT_EQ(reinforce_gradient(f.params, f.spec, b, BaselineState{0.7, 0.9, false}),
            reinforce_gradient(f.params, f.spec, b));
}

TEST(Equivalence, ReinforceEqualsRewardWeightedCrossEntropy) {
  Rng meta(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    for (auto mode : {SamplingMode::Joint, SamplingMode::FixedSkip}) {
      const int n = 2 + meta.below(6);
      const int k = 2 + meta.below(5);
      const auto f = make_fixture(n, k, mode, 100 + trial, 2 + meta.below(8));
      const int N = 1 + meta.below(16);
      std::vector<double> rewards;
      for (int i = 0; i < N; ++i) rewards.push_back(meta.uniform());
      const auto b = batch_with_rewards(f, N, meta.next(), rewards);
      const auto a = reinforce_gradient(f.params, f.spec, b);
      const auto c = ce_surrogate_gradient(f.params, f.spec, b);
      worst = std::max(worst, max_rel(a, c));
    }
  }
  EXPECT_LT(worst, 1e-10);
  std::printf("worst relative difference %.3e\n", worst);
}

TEST(DecisionWeights, SumToAssignedRewards) {
  const auto f = make_fixture(4, 3, SamplingMode::Joint, 6);
  const auto b = batch_with_rewards(f, 5, 7, {0.1, 0.4, 0.9});
  const auto w = decision_weights(b);
  ASSERT_EQ(w.size(), 5u);
  for (std::size_t i = 0; i < w.size(); ++i) {
    double row_total = 0.0;
    for (const auto& d : w[i])
      for (double x : d) row_total += x;
    EXPECT_NEAR(row_total, b.samples[i].reward * b.samples[i].trace.decisions.size() / 5.0, 1e-15);
  }
}

TEST(Baseline, Updates) {
  const auto f = make_fixture(3, 2, SamplingMode::Joint, 7);
  BaselineState s{0.0, 0.9, false};
  s = update_baseline(s, batch_with_rewards(f, 4, 1, {0.5}));
  EXPECT_TRUE(s.initialized);
  EXPECT_DOUBLE_EQ(s.ema, 0.5);
  s = update_baseline(s, batch_with_rewards(f, 4, 2, {1.0}));
  EXPECT_NEAR(s.ema, 0.55, 1e-15);
  BaselineState fixed{0.3, 0.9, true};
  EXPECT_NEAR(update_baseline(fixed, batch_with_rewards(f, 4, 3, {0.3})).ema, 0.3, 1e-16);
}

TEST(Baseline, ExactExpectationIsInvariant) {
  // Exact expectation over the space: sum_a p(a) (R(a) - b) grad log p(a)
  // does not depend on b.
  const auto f = make_fixture(3, 3, SamplingMode::Joint, 8);
  const ArchEnumerator en(f.spec);
  auto expected = [&](double b) {
    std::vector<double> total(f.params.size(), 0.0);
    for (std::uint64_t i = 0; i < en.size(); ++i) {
      const auto a = en.decode(i);
      const double p = std::exp(log_prob(f.params, a, f.spec, f.plan).total);
      const double r = 0.1 + 0.8 * std::sin(static_cast<double>(i)) * std::sin(static_cast<double>(i));
      const auto g = grad_log_prob(f.params, a, f.spec, f.plan);
      for (std::size_t c = 0; c < g.size(); ++c) total[c] += p * (r - b) * g[c];
    }
    return total;
  };
  const auto g0 = expected(0.0);
  const auto g1 = expected(0.7);
  for (std::size_t c = 0; c < g0.size(); ++c) EXPECT_NEAR(g0[c], g1[c], 1e-12);
}

TEST(Adam, ZeroGradientLeavesParams) {
  auto f = make_fixture(3, 2, SamplingMode::Joint, 9);
  const auto before = f.params;
  AdamState st;
  update(f.params, std::vector<double>(f.params.size(), 0.0), st);
  EXPECT_EQ(f.params, before);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, Deterministic) {
  auto a = make_fixture(3, 2, SamplingMode::Joint, 10);
  auto b = a;
  AdamState sa, sb;
  Rng rng(1);
  for (int it = 0; it < 20; ++it) {
    std::vector<double> g(a.params.size());
    for (auto& v : g) v = rng.normal();
    update(a.params, g, sa);
    update(b.params, g, sb);
  }
  EXPECT_EQ(a.params, b.params);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  auto f = make_fixture(3, 2, SamplingMode::Joint, 11);
  const auto before = f.params;
  AdamState st;
  std::vector<double> g(f.params.size(), -3.0);
  g[0] = 2.0;
  update(f.params, g, st);
  EXPECT_NEAR(f.params.values()[0] - before.values()[0], st.lr, 1e-9);
  EXPECT_NEAR(f.params.values()[1] - before.values()[1], -st.lr, 1e-9);
}

TEST(Adam, ConvergesOnQuadratic) {
  auto f = make_fixture(3, 2, SamplingMode::Joint, 12);
  std::vector<double> target(f.params.size());
  Rng rng(3);
  for (auto& t : target) t = rng.uniform(-0.5, 0.5);
  AdamState st;
  st.lr = 0.01;
  for (int it = 0; it < 3000; ++it) {
    std::vector<double> g(target.size());
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = target[c] - f.params.values()[c];  // ascent on -|x-t|^2/2
    update(f.params, g, st);
  }
  for (std::size_t c = 0; c < target.size(); ++c) EXPECT_NEAR(f.params.values()[c], target[c], 1e-3);
}

TEST(Adam, RejectsNonFinite) {
  auto f = make_fixture(3, 2, SamplingMode::Joint, 13);
  const auto before = f.params;
  AdamState st;
  std::vector<double> g(f.params.size(), 1.0);
  g[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(update(f.params, g, st), std::domain_error);
  g[5] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(update(f.params, g, st), std::domain_error);
  EXPECT_EQ(f.params, before);
  EXPECT_EQ(st.t, 0);
  EXPECT_TRUE(st.m.empty());
  EXPECT_THROW(update(f.params, std::vector<double>(3, 0.0), st), std::invalid_argument);
}

TEST(GradNorms, HeadSlices) {
  const auto L = ParamLayout::make(4, 3);
  std::vector<double> g(L.size, 0.0);
  GradLog log;
  auto r = log_grad_magnitudes(g, L, 0, log);
  EXPECT_EQ(r.op_grad_norm, 0.0);
  EXPECT_EQ(r.skip_grad_norm, 0.0);
  for (std::size_t c = L.op_head().first; c < L.op_head().second; ++c) g[c] = 1.0;
  g[L.skip_b] = 3.0;
  g[L.skip_b + 1] = 4.0;
  g[0] = 100.0;  // embedding: not counted
  r = log_grad_magnitudes(g, L, 7, log);
  EXPECT_DOUBLE_EQ(r.op_grad_norm, std::sqrt(15.0));
  EXPECT_DOUBLE_EQ(r.skip_grad_norm, 5.0);
  ASSERT_EQ(log.records.size(), 2u);
  EXPECT_EQ(log.records[1].step, 7);

  const auto path = std::filesystem::temp_directory_path() / "nar_gradlog_test.csv";
  write_gradlog_csv(log, path);
  std::ifstream in(path);
  std::string header, line1, line2;
  std::getline(in, header);
  std::getline(in, line1);
  std::getline(in, line2);
  EXPECT_EQ(header, "step,op_grad_norm,skip_grad_norm");
  EXPECT_EQ(line1, "0,0,0");
  EXPECT_EQ(line2.substr(0, 2), "7,");
  std::filesystem::remove(path);
}

TEST(CollectBatch, ParallelMatchesSerial) {
  for (auto mode : {SamplingMode::Joint, SamplingMode::FixedSkip}) {
    const auto f = make_fixture(6, 4, mode, 14, 8);
    TabularOracle oracle(generate_tabular(f.spec, {5, 1.0, 0.5, 3, 0.5}));
    for (int workers : {1, 2, 4}) {
      Rng r1(77), r2(77);
      const auto par = collect_batch(f.params, f.spec, f.plan, oracle, 33, 3, r1, workers);
      const auto ser = serial::collect_batch(f.params, f.spec, f.plan, oracle, 33, 3, r2);
      ASSERT_EQ(par.size(), ser.size());
      for (std::size_t i = 0; i < par.size(); ++i) {
        EXPECT_EQ(par.samples[i].arch, ser.samples[i].arch);
        EXPECT_EQ(par.samples[i].reward, ser.samples[i].reward);
        EXPECT_EQ(par.samples[i].trace.total_log_prob(), ser.samples[i].trace.total_log_prob());
      }
      EXPECT_EQ(r1.next(), r2.next());
      BaselineState base{0.4, 0.95, true};
      EXPECT_EQ(reinforce_gradient(f.params, f.spec, par, base, workers),
                serial::reinforce_gradient(f.params, f.spec, ser, base));
    }
  }
}

TEST(CollectBatch, Errors) {
  const auto f = make_fixture(4, 3, SamplingMode::Joint, 15);
  ArrayOracle bad(1.5);
  Rng rng(1);
  try {
    collect_batch(f.params, f.spec, f.plan, bad, 4, 0, rng, 2);
    FAIL();
  } catch (const OracleError& e) {
    EXPECT_EQ(e.sample_index(), 0);
  }
  EXPECT_THROW(collect_batch(f.params, f.spec, f.plan, bad, 0, 0, rng, 1), std::invalid_argument);

  // Find the architectures the batch will draw, then poison samples 3 and 5.
  Rng probe(9);
  ArrayOracle ok(0.5);
  const auto b = collect_batch(f.params, f.spec, f.plan, ok, 8, 0, probe, 1);
  ThrowAt thrower({b.samples[5].arch, b.samples[3].arch});
  std::size_t first = 3;
  for (std::size_t i = 0; i < 3; ++i)
    if (b.samples[i].arch == b.samples[3].arch || b.samples[i].arch == b.samples[5].arch) first = std::min(first, i);
  for (int workers : {1, 4}) {
    Rng again(9);
    try {
      collect_batch(f.params, f.spec, f.plan, thrower, 8, 0, again, workers);
      FAIL();
    } catch (const OracleError& e) {
      EXPECT_EQ(e.sample_index(), static_cast<long>(first));
    }
  }
}
