#include "nar/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <omp.h>

#include "nar/parallel.hpp"
#include "nar/rng.hpp"

namespace nar {

std::vector<double> RewardOracle::evaluate_batch(std::span<const ArchitectureVector> archs, int step,
                                                 int workers) {
  std::vector<double> rewards(archs.size());
  const auto n = static_cast<std::int64_t>(archs.size());
  if (!pure()) {
    for (std::int64_t i = 0; i < n; ++i) {
      try {
        rewards[static_cast<std::size_t>(i)] = evaluate(archs[static_cast<std::size_t>(i)], step);
      } catch (const std::exception& e) {
        throw OracleError(static_cast<long>(i), e.what());
      }
    }
    return rewards;
  }
  std::vector<std::string> messages(archs.size());
  std::vector<std::uint8_t> failed(archs.size(), 0);
#pragma omp parallel for schedule(static) num_threads(resolve_workers(workers))
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      rewards[idx] = evaluate(archs[idx], step);
    } catch (const std::exception& e) {
      failed[idx] = 1;
      messages[idx] = e.what();
    }
  }
  for (std::size_t i = 0; i < archs.size(); ++i)
    if (failed[i]) throw OracleError(static_cast<long>(i), messages[i]);
  return rewards;
}

TabularOracleSpec generate_tabular(const SearchSpaceSpec& space, const TabularGenParams& params) {
  TabularOracleSpec spec;
  spec.n_nodes = space.n_nodes();
  spec.num_ops = space.num_ops();
  spec.seed = params.seed;
  Rng rng(derive_seed(params.seed, {0x746162ULL}));
  spec.utilities.resize(static_cast<std::size_t>(spec.n_nodes * spec.num_ops));
  for (auto& u : spec.utilities) u = params.utility_scale * rng.normal();
  spec.edge_weights.resize(static_cast<std::size_t>(space.edge_count()));
  for (auto& w : spec.edge_weights) w = params.edge_scale * rng.normal();
  if (spec.n_nodes >= 2) {
    for (int q = 0; q < params.interactions; ++q) {
      Interaction it;
      it.node_a = 1 + rng.below(spec.n_nodes);
      do {
        it.node_b = 1 + rng.below(spec.n_nodes);
      } while (it.node_b == it.node_a);
      it.op_a = rng.below(spec.num_ops);
      it.op_b = rng.below(spec.num_ops);
      it.value = params.interaction_scale * rng.normal();
      spec.interactions.push_back(it);
    }
  }
  return spec;
}

double tabular_evaluate(const TabularOracleSpec& spec, const ArchitectureVector& arch) {
  double score = 0.0;
  for (int j = 1; j <= spec.n_nodes; ++j) score += spec.utility(j, arch.ops[static_cast<std::size_t>(j - 1)]);
  for (std::size_t e = 0; e < spec.edge_weights.size(); ++e)
    if (arch.skips[e]) score += spec.edge_weights[e];
  for (const auto& it : spec.interactions)
    if (arch.ops[static_cast<std::size_t>(it.node_a - 1)] == it.op_a &&
        arch.ops[static_cast<std::size_t>(it.node_b - 1)] == it.op_b)
      score += it.value;
  return 1.0 / (1.0 + std::exp(-score));
}

TabularOracle::TabularOracle(TabularOracleSpec spec) : spec_(std::move(spec)) {
  if (spec_.n_nodes < 1 || spec_.num_ops < 2) throw std::invalid_argument("tabular oracle: bad dimensions");
  if (spec_.utilities.size() != static_cast<std::size_t>(spec_.n_nodes * spec_.num_ops))
    throw std::invalid_argument("tabular oracle: utilities must be n_nodes x num_ops");
  if (spec_.edge_weights.size() != static_cast<std::size_t>(candidate_edges(spec_.n_nodes).edge_count()))
    throw std::invalid_argument("tabular oracle: one edge weight per candidate edge required");
  for (const auto& it : spec_.interactions) {
    if (it.node_a < 1 || it.node_a > spec_.n_nodes || it.node_b < 1 || it.node_b > spec_.n_nodes || it.op_a < 0 ||
        it.op_a >= spec_.num_ops || it.op_b < 0 || it.op_b >= spec_.num_ops)
      throw std::invalid_argument("tabular oracle: interaction out of range");
    if (it.node_a == it.node_b) throw std::invalid_argument("tabular oracle: interaction must pair two different nodes");
  }
}

TabularOracleSpec tabular_from_json(const nlohmann::json& j, const SearchSpaceSpec& space) {
  if (!j.is_object()) throw std::invalid_argument("tabular: expected object");
  if (j.contains("utilities")) {
    TabularOracleSpec spec;
    spec.n_nodes = space.n_nodes();
    spec.num_ops = space.num_ops();
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.utilities = j.at("utilities").get<std::vector<double>>();
    spec.edge_weights = j.value("edge_weights", std::vector<double>(static_cast<std::size_t>(space.edge_count()), 0.0));
    for (const auto& it : j.value("interactions", nlohmann::json::array()))
      spec.interactions.push_back({it.at("node_a").get<int>(), it.at("op_a").get<int>(), it.at("node_b").get<int>(),
                                   it.at("op_b").get<int>(), it.at("value").get<double>()});
    TabularOracle check(spec);  // validates shapes
    return spec;
  }
  TabularGenParams p;
  p.seed = j.value("seed", std::uint64_t{0});
  p.utility_scale = j.value("utility_scale", p.utility_scale);
  p.edge_scale = j.value("edge_scale", p.edge_scale);
  p.interactions = j.value("interactions", p.interactions);
  p.interaction_scale = j.value("interaction_scale", p.interaction_scale);
  if (p.interactions < 0) throw std::invalid_argument("tabular.interactions: must be >= 0");
  return generate_tabular(space, p);
}

nlohmann::json to_json(const TabularOracleSpec& spec) {
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& it : spec.interactions)
    inter.push_back(
        {{"node_a", it.node_a}, {"op_a", it.op_a}, {"node_b", it.node_b}, {"op_b", it.op_b}, {"value", it.value}});
  return {{"seed", spec.seed},
          {"utilities", spec.utilities},
          {"edge_weights", spec.edge_weights},
          {"interactions", inter}};
}

double ProxyBiasSpec::bias(int step) const { return beta0 * std::exp(-static_cast<double>(step) / decay); }
double ProxyBiasSpec::noise_scale(int step) const { return sigma0 * std::exp(-static_cast<double>(step) / decay); }

ProxyOracle::ProxyOracle(std::shared_ptr<RewardOracle> base, ProxyBiasSpec spec)
    : base_(std::move(base)), spec_(spec) {
  if (!base_) throw std::invalid_argument("proxy oracle needs a base oracle");
  if (!base_->pure()) throw std::invalid_argument("proxy oracle base must be pure");
  if (spec_.beta0 < 0.0 || spec_.sigma0 < 0.0) throw std::invalid_argument("proxy beta0 and sigma0 must be >= 0");
  if (!(spec_.decay > 0.0)) throw std::invalid_argument("proxy decay constant T must be > 0");
}

double ProxyOracle::evaluate(const ArchitectureVector& arch, int step) {
  const double base = base_->evaluate(arch, step);
  const double xi = keyed_normal(derive_seed(spec_.seed, {arch_hash(arch), static_cast<std::uint64_t>(step)}));
  const double r = base + spec_.bias(step) * (skip_density(arch) - 0.5) + spec_.noise_scale(step) * xi;
  return std::clamp(r, 0.0, 1.0);
}

std::uint64_t arch_hash(const ArchitectureVector& arch) {
  // FNV-1a over ops, a separator, then skip bits.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (int k : arch.ops) feed(static_cast<std::uint64_t>(k));
  feed(0xffffffffULL);
  for (auto b : arch.skips) feed(b);
  return h;
}

ArchEnumerator::ArchEnumerator(const SearchSpaceSpec& space, std::uint64_t limit) : space_(space) {
  const auto total = cardinality(space).total();
  if (total > BigInt(limit))
    throw GuardError("space has " + total.str() + " architectures, enumeration limit is " + std::to_string(limit));
  const auto& topo = space.topology();
  std::vector<Digit> msb_first;
  for (int j = 1; j <= space.n_nodes(); ++j) {
    msb_first.push_back({true, j - 1, space.num_ops()});
    if (space.fixed_skip()) continue;
    const int first = topo.first_edge_of(j);
    for (int e = first; e < first + topo.edges_into(j); ++e) msb_first.push_back({false, e, 2});
  }
  digits_.assign(msb_first.rbegin(), msb_first.rend());
  size_ = total.convert_to<std::uint64_t>();
}

ArchitectureVector ArchEnumerator::decode(std::uint64_t index) const {
  ArchitectureVector arch;
  arch.ops.assign(static_cast<std::size_t>(space_.n_nodes()), 0);
  arch.skips = space_.frozen_skips().value_or(SkipMask(static_cast<std::size_t>(space_.edge_count()), 0));
  for (const auto& d : digits_) {
    const int v = static_cast<int>(index % static_cast<std::uint64_t>(d.radix));
    index /= static_cast<std::uint64_t>(d.radix);
    if (d.is_op)
      arch.ops[static_cast<std::size_t>(d.position)] = v;
    else
      arch.skips[static_cast<std::size_t>(d.position)] = static_cast<std::uint8_t>(v);
  }
  return arch;
}

std::uint64_t ArchEnumerator::encode(const ArchitectureVector& arch) const {
  std::uint64_t index = 0;
  for (auto it = digits_.rbegin(); it != digits_.rend(); ++it) {
    const int v = it->is_op ? arch.ops[static_cast<std::size_t>(it->position)]
                            : arch.skips[static_cast<std::size_t>(it->position)];
    index = index * static_cast<std::uint64_t>(it->radix) + static_cast<std::uint64_t>(v);
  }
  return index;
}

namespace {

bool better(double reward, std::uint64_t index, double best_reward, std::uint64_t best_index) {
  return reward > best_reward || (reward == best_reward && index < best_index);
}

void sort_ranking(std::vector<RankedArch>& ranking) {
  std::sort(ranking.begin(), ranking.end(), [](const RankedArch& a, const RankedArch& b) {
    return a.reward != b.reward ? a.reward > b.reward : a.index < b.index;
  });
}

}  // namespace

EnumerationResult enumerate_optimum(RewardOracle& oracle, const SearchSpaceSpec& space, bool with_ranking,
                                    int workers, std::uint64_t limit) {
  if (!oracle.pure()) throw std::invalid_argument("enumeration requires a pure oracle");
  const ArchEnumerator en(space, limit);
  const auto n = static_cast<std::int64_t>(en.size());
  std::vector<RankedArch> ranking(with_ranking ? en.size() : 0);
  double best_reward = -std::numeric_limits<double>::infinity();
  std::uint64_t best_index = 0;
  IndexedErrors errors(1);

#pragma omp parallel num_threads(resolve_workers(workers))
  {
    double local_reward = -std::numeric_limits<double>::infinity();
    std::uint64_t local_index = 0;
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      try {
        const auto idx = static_cast<std::uint64_t>(i);
        const double r = oracle.evaluate(en.decode(idx), 0);
        if (with_ranking) ranking[idx] = {idx, r};
        if (better(r, idx, local_reward, local_index)) {
          local_reward = r;
          local_index = idx;
        }
      } catch (...) {
#pragma omp critical(nar_enum_error)
        errors.capture(0);
      }
    }
#pragma omp critical(nar_enum_best)
    if (better(local_reward, local_index, best_reward, best_index)) {
      best_reward = local_reward;
      best_index = local_index;
    }
  }
  errors.rethrow_first();

  EnumerationResult result;
  result.count = en.size();
  result.best_arch = en.decode(best_index);
  result.best_reward = best_reward;
  if (with_ranking) {
    sort_ranking(ranking);
    result.ranking = std::move(ranking);
  }
  return result;
}

EnumerationResult enumerate_optimum(const TabularOracleSpec& spec, const SearchSpaceSpec& space, bool with_ranking,
                                    int workers) {
  TabularOracle oracle(spec);
  return enumerate_optimum(oracle, space, with_ranking, workers);
}

}  // namespace nar
