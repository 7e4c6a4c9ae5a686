#pragma once

// The per-decision credit implied by the policy gradient: each operator
// value and each skip value receives the batch rewards of the samples that
// chose it, divided by N.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nar/archspace.hpp"
#include "nar/pgtrainer.hpp"

namespace nar {

struct RewardAssignmentTable {
  int n_nodes = 0;
  int num_ops = 0;
  std::vector<double> op_rewards;  // n_nodes x num_ops, row-major
  std::vector<SkipEdge> edges;
  std::vector<double> skip_r1, skip_r0;  // per edge: S = 1 and S = 0
  double mean_reward = 0.0;

  double op(int node, int k) const { return op_rewards[static_cast<std::size_t>((node - 1) * num_ops + k)]; }
};

/// op_rewards[j][k] = sum_i [O^i_j = k] R^i / N; skip_r1[e] = sum_i [S^i_e = 1] R^i / N,
/// skip_r0[e] likewise for S = 0. Values are read from the sampled
/// architectures, so frozen skips count as chosen.
RewardAssignmentTable assign_rewards(const SampleBatch& batch, const SearchSpaceSpec& spec);

nlohmann::json to_json(const RewardAssignmentTable& table);

struct DecisionNoise {
  std::string id;  // O_j_k or S_t_j_v
  bool skip = false;
  int node = 0;
  int edge_t = 0;  // 0 for operator entries
  int value = 0;   // operator index or skip value
  double mean = 0.0;
  double variance = 0.0;  // unbiased, divides by count - 1
  std::size_t count = 0;
};

struct DepthNoise {
  int node = 0;
  int edge_count = 0;  // j - 2 for j >= 3
  double mean_skip_variance = 0.0;
  double mean_op_variance = 0.0;
};

struct NoiseStats {
  std::vector<DecisionNoise> decisions;
  std::vector<DepthNoise> depth;
  double mean_op_variance = 0.0;
  double mean_skip_variance = 0.0;  // 0 when there are no edges
};

// Requires at least two tables of the same shape.
NoiseStats assignment_noise_stats(const std::vector<RewardAssignmentTable>& tables, const SearchSpaceSpec& spec);

// `batches` independent batches of size n from a fixed policy.
std::vector<RewardAssignmentTable> repeated_assignments(const ControllerParams& params, const SearchSpaceSpec& spec,
                                                        const SamplingPlan& plan, RewardOracle& oracle, int n,
                                                        int batches, std::uint64_t seed, int workers = 0);

nlohmann::json to_json(const NoiseStats& stats);
// Columns: decision_id,kind,node,edge_t,mean,variance,count.
void write_noise_csv(const NoiseStats& stats, const std::filesystem::path& path);

}  // namespace nar
