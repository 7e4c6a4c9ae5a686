#pragma once

// Single-threaded reference versions of the parallel kernels. Tests and the
// benchmark compare them with the OpenMP versions; results must be bitwise
// equal.

#include <optional>
#include <vector>

#include "nar/oracles.hpp"
#include "nar/pgtrainer.hpp"

namespace nar::serial {

SampleBatch collect_batch(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                          RewardOracle& oracle, int n, int step, Rng& rng);

std::vector<double> reinforce_gradient(const ControllerParams& params, const SearchSpaceSpec& spec,
                                       const SampleBatch& batch, const std::optional<BaselineState>& baseline = {});

EnumerationResult enumerate_optimum(RewardOracle& oracle, const SearchSpaceSpec& space,
                                    std::uint64_t limit = kEnumerationLimit);

}  // namespace nar::serial
