#include "nar/serial.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nar::serial {

SampleBatch collect_batch(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                          RewardOracle& oracle, int n, int step, Rng& rng) {
  if (n < 1) throw std::invalid_argument("batch size N must be >= 1");
  const std::uint64_t batch_seed = rng.next();
  SampleBatch batch;
  batch.plan = plan;
  batch.step = step;
  for (int i = 0; i < n; ++i) {
    Rng local(derive_seed(batch_seed, {static_cast<std::uint64_t>(i)}));
    auto r = sample_rollout(params, spec, plan, local);
    batch.samples.push_back({std::move(r.arch), std::move(r.trace), 0.0});
  }
  for (int i = 0; i < n; ++i) {
    auto& s = batch.samples[static_cast<std::size_t>(i)];
    double r = 0.0;
    try {
      r = oracle.evaluate(s.arch, step);
    } catch (const std::exception& e) {
      throw OracleError(i, e.what());
    }
    if (!std::isfinite(r) || r < 0.0 || r > 1.0) throw OracleError(i, "reward outside [0, 1]: " + std::to_string(r));
    s.reward = r;
  }
  return batch;
}

std::vector<double> reinforce_gradient(const ControllerParams& params, const SearchSpaceSpec& spec,
                                       const SampleBatch& batch, const std::optional<BaselineState>& baseline) {
  if (batch.samples.empty()) throw std::invalid_argument("empty sample batch");
  const double b = baseline && baseline->initialized ? baseline->ema : 0.0;
  std::vector<double> total(params.size(), 0.0);
  for (const auto& s : batch.samples) {
    const double adv = s.reward - b;
    if (adv == 0.0) continue;
    const auto g = grad_log_prob(params, s.arch, spec, batch.plan);
    for (std::size_t c = 0; c < total.size(); ++c) total[c] += g[c] * adv;
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (auto& v : total) v *= inv_n;
  return total;
}

EnumerationResult enumerate_optimum(RewardOracle& oracle, const SearchSpaceSpec& space, std::uint64_t limit) {
  if (!oracle.pure()) throw std::invalid_argument("enumeration requires a pure oracle");
  const ArchEnumerator en(space, limit);
  EnumerationResult result;
  result.count = en.size();
  result.best_reward = -std::numeric_limits<double>::infinity();
  std::uint64_t best = 0;
  for (std::uint64_t i = 0; i < en.size(); ++i) {
    const double r = oracle.evaluate(en.decode(i), 0);
    if (r > result.best_reward) {
      result.best_reward = r;
      best = i;
    }
  }
  result.best_arch = en.decode(best);
  return result;
}

}  // namespace nar::serial
