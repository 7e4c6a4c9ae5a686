#include "nar/pgtrainer.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "nar/parallel.hpp"

namespace nar {

double SampleBatch::mean_reward() const {
  double s = 0.0;
  for (const auto& x : samples) s += x.reward;
  return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

SampleBatch collect_batch(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                          RewardOracle& oracle, int n, int step, Rng& rng, int workers) {
  if (n < 1) throw std::invalid_argument("batch size N must be >= 1");
  const std::uint64_t batch_seed = rng.next();
  SampleBatch batch;
  batch.plan = plan;
  batch.step = step;
  batch.samples.resize(static_cast<std::size_t>(n));
  IndexedErrors errors(batch.samples.size());

#pragma omp parallel for schedule(static) num_threads(resolve_workers(workers))
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      Rng local(derive_seed(batch_seed, {static_cast<std::uint64_t>(i)}));
      auto r = sample_rollout(params, spec, plan, local);
      batch.samples[idx].arch = std::move(r.arch);
      batch.samples[idx].trace = std::move(r.trace);
    } catch (...) {
      errors.capture(idx);
    }
  }
  errors.rethrow_first();

  std::vector<ArchitectureVector> archs;
  archs.reserve(batch.samples.size());
  for (const auto& s : batch.samples) archs.push_back(s.arch);
  const auto rewards = oracle.evaluate_batch(archs, step, workers);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!std::isfinite(rewards[i]) || rewards[i] < 0.0 || rewards[i] > 1.0)
      throw OracleError(static_cast<long>(i), "reward outside [0, 1]: " + std::to_string(rewards[i]));
    batch.samples[i].reward = rewards[i];
  }
  return batch;
}

BaselineState update_baseline(const BaselineState& state, const SampleBatch& batch) {
  BaselineState next = state;
  const double mean = batch.mean_reward();
  if (!state.initialized) {
    next.ema = mean;
    next.initialized = true;
  } else {
    next.ema = state.decay * state.ema + (1.0 - state.decay) * mean;
  }
  return next;
}

namespace {

// Runs `per_sample(i)` for every sample in parallel, then sums the results in
// index order.
template <class F>
std::vector<double> ordered_sum(std::size_t n, std::size_t dim, int workers, F&& per_sample) {
  std::vector<std::vector<double>> parts(n);
  IndexedErrors errors(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(resolve_workers(workers))
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    try {
      parts[static_cast<std::size_t>(i)] = per_sample(static_cast<std::size_t>(i));
    } catch (...) {
      errors.capture(static_cast<std::size_t>(i));
    }
  }
  errors.rethrow_first();
  std::vector<double> total(dim, 0.0);
  for (const auto& p : parts)
    for (std::size_t c = 0; c < dim; ++c) total[c] += p[c];
  return total;
}

void require_batch(const SampleBatch& batch) {
  if (batch.samples.empty()) throw std::invalid_argument("empty sample batch");
  for (const auto& s : batch.samples)
    if (!std::isfinite(s.reward)) throw std::invalid_argument("non-finite reward in batch");
}

}  // namespace

std::vector<double> reinforce_gradient(const ControllerParams& params, const SearchSpaceSpec& spec,
                                       const SampleBatch& batch, const std::optional<BaselineState>& baseline,
                                       int workers) {
  require_batch(batch);
  const double b = baseline && baseline->initialized ? baseline->ema : 0.0;
  auto g = ordered_sum(batch.size(), params.size(), workers, [&](std::size_t i) {
    const auto& s = batch.samples[i];
    const double adv = s.reward - b;
    if (adv == 0.0) return std::vector<double>(params.size(), 0.0);
    auto gi = grad_log_prob(params, s.arch, spec, batch.plan);
    for (auto& v : gi) v *= adv;
    return gi;
  });
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (auto& v : g) v *= inv_n;
  return g;
}

std::vector<std::vector<std::vector<double>>> decision_weights(const SampleBatch& batch) {
  require_batch(batch);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<std::vector<double>>> w(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch.samples[i];
    for (const auto& d : s.trace.decisions) {
      std::vector<double> row(d.probs.size(), 0.0);
      if (!d.forced) row[static_cast<std::size_t>(d.choice)] = s.reward * inv_n;
      w[i].push_back(std::move(row));
    }
  }
  return w;
}

std::vector<double> ce_surrogate_gradient(const ControllerParams& params, const SearchSpaceSpec& spec,
                                          const SampleBatch& batch, int workers) {
  const auto weights = decision_weights(batch);
  return ordered_sum(batch.size(), params.size(), workers, [&](std::size_t i) {
    const auto rollout = replay_rollout(params, spec, batch.plan, batch.samples[i].arch);
    std::vector<Eigen::VectorXd> seeds;
    seeds.reserve(rollout.trace.decisions.size());
    for (std::size_t d = 0; d < rollout.trace.decisions.size(); ++d) {
      const auto& probs = rollout.trace.decisions[d].probs;
      const auto& target = weights[i][d];
      double mass = 0.0;
      for (double t : target) mass += t;
      Eigen::VectorXd seed(static_cast<Eigen::Index>(probs.size()));
      for (std::size_t k = 0; k < probs.size(); ++k) seed[static_cast<Eigen::Index>(k)] = target[k] - probs[k] * mass;
      seeds.push_back(std::move(seed));
    }
    return backward(params, rollout, seeds);
  });
}

void update(ControllerParams& params, std::span<const double> gradient, AdamState& state) {
  if (gradient.size() != params.size()) throw std::invalid_argument("gradient length != parameter count");
  for (double g : gradient)
    if (!std::isfinite(g)) throw std::domain_error("non-finite gradient; parameters left unchanged");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto values = params.values();
  for (std::size_t c = 0; c < values.size(); ++c) {
    const double g = gradient[c];
    state.m[c] = state.beta1 * state.m[c] + (1.0 - state.beta1) * g;
    state.v[c] = state.beta2 * state.v[c] + (1.0 - state.beta2) * g * g;
    values[c] += state.lr * (state.m[c] / c1) / (std::sqrt(state.v[c] / c2) + state.eps);
  }
}

GradRecord log_grad_magnitudes(std::span<const double> gradient, const ParamLayout& layout, int step, GradLog& log) {
  if (gradient.size() != layout.size) throw std::invalid_argument("gradient length != parameter count");
  auto norm = [&](std::pair<std::size_t, std::size_t> range) {
    double s = 0.0;
    for (std::size_t c = range.first; c < range.second; ++c) s += gradient[c] * gradient[c];
    return std::sqrt(s);
  };
  GradRecord rec{step, norm(layout.op_head()), norm(layout.skip_head())};
  log.records.push_back(rec);
  return rec;
}

void write_gradlog_csv(const GradLog& log, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::fprintf(f, "step,op_grad_norm,skip_grad_norm\n");
  for (const auto& r : log.records) std::fprintf(f, "%d,%.17g,%.17g\n", r.step, r.op_grad_norm, r.skip_grad_norm);
  std::fclose(f);
}

}  // namespace nar
