#include "nar/reward.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace nar {

RewardAssignmentTable assign_rewards(const SampleBatch& batch, const SearchSpaceSpec& spec) {
  if (batch.samples.empty()) throw std::invalid_argument("assign_rewards: empty batch");
  const auto& topo = spec.topology();
  RewardAssignmentTable t;
  t.n_nodes = spec.n_nodes();
  t.num_ops = spec.num_ops();
  t.op_rewards.assign(static_cast<std::size_t>(t.n_nodes * t.num_ops), 0.0);
  t.edges = topo.edges;
  t.skip_r1.assign(topo.edges.size(), 0.0);
  t.skip_r0.assign(topo.edges.size(), 0.0);

  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& s : batch.samples) {
    if (s.arch.ops.size() != static_cast<std::size_t>(t.n_nodes) || s.arch.skips.size() != topo.edges.size())
      throw std::invalid_argument("assign_rewards: sample does not match the search space");
    const double share = s.reward / n;
    for (int j = 0; j < t.n_nodes; ++j)
      t.op_rewards[static_cast<std::size_t>(j * t.num_ops + s.arch.ops[static_cast<std::size_t>(j)])] += share;
    for (std::size_t e = 0; e < topo.edges.size(); ++e) (s.arch.skips[e] ? t.skip_r1 : t.skip_r0)[e] += share;
    total += s.reward;
  }
  t.mean_reward = total / n;
  return t;
}

nlohmann::json to_json(const RewardAssignmentTable& t) {
  nlohmann::json skips = nlohmann::json::array();
  for (std::size_t e = 0; e < t.edges.size(); ++e)
    skips.push_back({{"t", t.edges[e].t}, {"j", t.edges[e].j}, {"r1", t.skip_r1[e]}, {"r0", t.skip_r0[e]}});
  return {{"n_nodes", t.n_nodes},
          {"num_ops", t.num_ops},
          {"mean_reward", t.mean_reward},
          {"op_rewards", t.op_rewards},
          {"skip_rewards", skips}};
}

namespace {

void mean_var(const std::vector<double>& xs, double& mean, double& var) {
  // Shifted by the first value so that constant series give exactly zero.
  const double x0 = xs.front();
  const auto n = static_cast<double>(xs.size());
  double s = 0.0, ss = 0.0;
  for (double x : xs) {
    s += x - x0;
    ss += (x - x0) * (x - x0);
  }
  mean = x0 + s / n;
  var = std::max(0.0, (ss - s * s / n) / (n - 1.0));
}

}  // namespace

NoiseStats assignment_noise_stats(const std::vector<RewardAssignmentTable>& tables, const SearchSpaceSpec& spec) {
  if (tables.size() < 2) throw std::invalid_argument("noise statistics need at least two tables");
  const int n = spec.n_nodes(), K = spec.num_ops();
  const auto& topo = spec.topology();
  for (const auto& t : tables)
    if (t.n_nodes != n || t.num_ops != K || t.edges.size() != topo.edges.size())
      throw std::invalid_argument("noise statistics: table shape does not match the search space");

  NoiseStats stats;
  std::vector<double> xs(tables.size());
  auto add = [&](DecisionNoise d, auto&& get) {
    for (std::size_t b = 0; b < tables.size(); ++b) xs[b] = get(tables[b]);
    mean_var(xs, d.mean, d.variance);
    d.count = tables.size();
    stats.decisions.push_back(std::move(d));
  };

  std::vector<DepthNoise> depth(static_cast<std::size_t>(n));
  double op_sum = 0.0, skip_sum = 0.0;
  std::size_t skip_entries = 0;
  for (int j = 1; j <= n; ++j) {
    auto& dn = depth[static_cast<std::size_t>(j - 1)];
    dn.node = j;
    dn.edge_count = topo.edges_into(j);
    for (int k = 0; k < K; ++k) {
      add({"O_" + std::to_string(j) + "_" + std::to_string(k), false, j, 0, k},
          [&](const RewardAssignmentTable& t) { return t.op(j, k); });
      dn.mean_op_variance += stats.decisions.back().variance / K;
      op_sum += stats.decisions.back().variance;
    }
    const int first = topo.first_edge_of(j);
    for (int e = first; e < first + topo.edges_into(j); ++e) {
      const int src = topo.edges[static_cast<std::size_t>(e)].t;
      for (int v = 1; v >= 0; --v) {
        add({"S_" + std::to_string(src) + "_" + std::to_string(j) + "_" + std::to_string(v), true, j, src, v},
            [&](const RewardAssignmentTable& t) { return (v ? t.skip_r1 : t.skip_r0)[static_cast<std::size_t>(e)]; });
        dn.mean_skip_variance += stats.decisions.back().variance;
        skip_sum += stats.decisions.back().variance;
        ++skip_entries;
      }
    }
    if (dn.edge_count > 0) dn.mean_skip_variance /= 2.0 * dn.edge_count;
  }
  stats.depth = std::move(depth);
  stats.mean_op_variance = op_sum / (n * K);
  stats.mean_skip_variance = skip_entries ? skip_sum / static_cast<double>(skip_entries) : 0.0;
  return stats;
}

std::vector<RewardAssignmentTable> repeated_assignments(const ControllerParams& params, const SearchSpaceSpec& spec,
                                                        const SamplingPlan& plan, RewardOracle& oracle, int n,
                                                        int batches, std::uint64_t seed, int workers) {
  if (batches < 1) throw std::invalid_argument("batches must be >= 1");
  Rng rng(derive_seed(seed, {0x6e6f6973ULL}));
  std::vector<RewardAssignmentTable> tables;
  tables.reserve(static_cast<std::size_t>(batches));
  for (int b = 0; b < batches; ++b)
    tables.push_back(assign_rewards(collect_batch(params, spec, plan, oracle, n, 0, rng, workers), spec));
  return tables;
}

nlohmann::json to_json(const NoiseStats& s) {
  nlohmann::json depth = nlohmann::json::array();
  for (const auto& d : s.depth)
    depth.push_back({{"node", d.node},
                     {"edge_count", d.edge_count},
                     {"mean_skip_variance", d.mean_skip_variance},
                     {"mean_op_variance", d.mean_op_variance}});
  return {{"mean_op_variance", s.mean_op_variance},
          {"mean_skip_variance", s.mean_skip_variance},
          {"batches", s.decisions.empty() ? 0 : s.decisions.front().count},
          {"depth", depth}};
}

void write_noise_csv(const NoiseStats& stats, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::fprintf(f, "decision_id,kind,node,edge_t,mean,variance,count\n");
  for (const auto& d : stats.decisions)
    std::fprintf(f, "%s,%s,%d,%d,%.17g,%.17g,%zu\n", d.id.c_str(), d.skip ? "skip" : "op", d.node, d.edge_t, d.mean,
                 d.variance, d.count);
  std::fclose(f);
}

}  // namespace nar
