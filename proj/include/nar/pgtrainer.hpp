#pragma once

// REINFORCE with an optional moving-average baseline, the reward-weighted
// cross-entropy form of the same gradient, Adam ascent and per-head gradient
// norms.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "nar/archspace.hpp"
#include "nar/controller.hpp"
#include "nar/oracles.hpp"
#include "nar/rng.hpp"

namespace nar {

struct Sample {
  ArchitectureVector arch;
  DecisionTrace trace;
  double reward = 0.0;
};

struct SampleBatch {
  SamplingPlan plan;
  int step = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  double mean_reward() const;
};

/// Draws one batch seed from `rng`; sample i uses derive_seed(batch_seed, {i}).
/// Sampling and (pure) oracle evaluation are spread over `workers` threads;
/// the result does not depend on the worker count.
SampleBatch collect_batch(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                          RewardOracle& oracle, int n, int step, Rng& rng, int workers = 0);

struct BaselineState {
  double ema = 0.0;
  double decay = 0.95;
  bool initialized = false;
};

// First call sets ema to the batch mean; later calls blend with `decay`.
BaselineState update_baseline(const BaselineState& state, const SampleBatch& batch);

/// (1/N) sum_i (R^i - b) grad log p(tau^i), b = baseline->ema or 0. Per-sample
/// gradients are computed in parallel and summed in sample order.
std::vector<double> reinforce_gradient(const ControllerParams& params, const SearchSpaceSpec& spec,
                                       const SampleBatch& batch, const std::optional<BaselineState>& baseline = {},
                                       int workers = 0);

/// Per-sample share of the assigned rewards: for sample i and decision d,
/// W[i][d][k] = R^i [choice == k] / N. Summing over samples gives the
/// operator and skip reward tables. Forced decisions get zero weight.
std::vector<std::vector<std::vector<double>>> decision_weights(const SampleBatch& batch);

/// Gradient of sum_i sum_d sum_k W[i][d][k] log p_d^i(k), the reward-weighted
/// cross-entropy with the assigned rewards as soft targets. Logit seeds are
/// W - p sum(W), pushed through BPTT per sample.
std::vector<double> ce_surrogate_gradient(const ControllerParams& params, const SearchSpaceSpec& spec,
                                          const SampleBatch& batch, int workers = 0);

struct AdamState {
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<double> m, v;
};

// One ascent step. Throws std::domain_error on a non-finite gradient, leaving
// params and state untouched.
void update(ControllerParams& params, std::span<const double> gradient, AdamState& state);

struct GradRecord {
  int step = 0;
  double op_grad_norm = 0.0;
  double skip_grad_norm = 0.0;
};

struct GradLog {
  std::vector<GradRecord> records;
};

// L2 norms of the operator-head and skip-head slices; appended to `log`.
GradRecord log_grad_magnitudes(std::span<const double> gradient, const ParamLayout& layout, int step, GradLog& log);

void write_gradlog_csv(const GradLog& log, const std::filesystem::path& path);

}  // namespace nar
