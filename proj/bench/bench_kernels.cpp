// Serial reference kernels against their OpenMP counterparts.
// Arg 0 selects the serial version; otherwise it is the worker count.

#include <benchmark/benchmark.h>

#include "nar/nar.hpp"
#include "nar/pgtrainer.hpp"
#include "nar/serial.hpp"

using namespace nar;

namespace {

struct Setup {
  SearchSpaceSpec space{OperatorVocabulary::default_six(), 8};
  ControllerParams params = init_controller({64, 6, 8, SamplingMode::Joint}, 1);
  std::shared_ptr<RewardOracle> oracle = make_oracle({{"kind", "tabular"}, {"seed", 3}}, space);
  SampleBatch batch;

  Setup() {
    Rng rng(2);
    batch = collect_batch(params, space, {SamplingMode::Joint, {}}, *oracle, 64, 0, rng, 1);
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_CollectBatch(benchmark::State& state) {
  const auto& s = setup();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Rng rng(7);
    auto b = workers == 0 ? serial::collect_batch(s.params, s.space, {SamplingMode::Joint, {}}, *s.oracle, 64, 0, rng)
                          : collect_batch(s.params, s.space, {SamplingMode::Joint, {}}, *s.oracle, 64, 0, rng, workers);
    benchmark::DoNotOptimize(b.samples.data());
  }
}

void BM_ReinforceGradient(benchmark::State& state) {
  const auto& s = setup();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto g = workers == 0 ? serial::reinforce_gradient(s.params, s.space, s.batch)
                          : reinforce_gradient(s.params, s.space, s.batch, std::nullopt, workers);
    benchmark::DoNotOptimize(g.data());
  }
}

void BM_EnumerateOptimum(benchmark::State& state) {
  const SearchSpaceSpec space(OperatorVocabulary::face_four(), 5);
  auto oracle = make_oracle({{"kind", "tabular"}, {"seed", 5}}, space);
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto r = workers == 0 ? serial::enumerate_optimum(*oracle, space) : enumerate_optimum(*oracle, space, false, workers);
    benchmark::DoNotOptimize(r.best_reward);
  }
}

}  // namespace

BENCHMARK(BM_CollectBatch)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ReinforceGradient)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnumerateOptimum)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
