#pragma once

// Reward oracles: an enumerable tabular landscape, a proxy-task wrapper that
// rewards dense skips early in the search, and exhaustive enumeration.

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nar/archspace.hpp"

namespace nar {

class OracleError : public std::runtime_error {
 public:
  OracleError(long sample_index, const std::string& what)
      : std::runtime_error(sample_index >= 0 ? "sample " + std::to_string(sample_index) + ": " + what : what),
        sample_index_(sample_index) {}
  long sample_index() const { return sample_index_; }

 private:
  long sample_index_;
};

// Raised when a space is too large to enumerate.
class GuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RewardOracle {
 public:
  virtual ~RewardOracle() = default;

  // Reward in [0, 1].
  virtual double evaluate(const ArchitectureVector& arch, int step) = 0;

  // rewards[i] belongs to archs[i]. Pure oracles fan out over `workers`
  // threads; exceptions come back as OracleError carrying the index.
  virtual std::vector<double> evaluate_batch(std::span<const ArchitectureVector> archs, int step, int workers);

  // A pure oracle's evaluate is a function of (arch, step) only and may be
  // called concurrently.
  virtual bool pure() const = 0;
};

struct Interaction {
  int node_a = 0;  // 1-indexed
  int op_a = 0;
  int node_b = 0;
  int op_b = 0;
  double value = 0.0;
};

struct TabularOracleSpec {
  int n_nodes = 0;
  int num_ops = 0;
  std::vector<double> utilities;     // n_nodes x num_ops, row-major
  std::vector<double> edge_weights;  // one per candidate edge, canonical order
  std::vector<Interaction> interactions;
  std::uint64_t seed = 0;

  double utility(int node, int op) const {
    return utilities[static_cast<std::size_t>((node - 1) * num_ops + op)];
  }
};

struct TabularGenParams {
  std::uint64_t seed = 0;
  double utility_scale = 1.0;
  double edge_scale = 0.5;
  int interactions = 0;
  double interaction_scale = 0.5;
};

// Utilities, edge weights and interaction values are N(0, scale^2).
TabularOracleSpec generate_tabular(const SearchSpaceSpec& space, const TabularGenParams& params);

// logistic(sum_j u[j][op_j] + sum_e w[e] s[e] + sum of active interactions).
double tabular_evaluate(const TabularOracleSpec& spec, const ArchitectureVector& arch);

class TabularOracle : public RewardOracle {
 public:
  explicit TabularOracle(TabularOracleSpec spec);

  double evaluate(const ArchitectureVector& arch, int) override { return tabular_evaluate(spec_, arch); }
  bool pure() const override { return true; }
  const TabularOracleSpec& spec() const { return spec_; }

 private:
  TabularOracleSpec spec_;
};

// Either explicit tables ("utilities", "edge_weights", "interactions") or
// generator parameters ("seed", "utility_scale", "edge_scale",
// "interactions" as a count, "interaction_scale").
TabularOracleSpec tabular_from_json(const nlohmann::json& j, const SearchSpaceSpec& space);
nlohmann::json to_json(const TabularOracleSpec& spec);

struct ProxyBiasSpec {
  double beta0 = 0.3;
  double decay = 200.0;  // T
  double sigma0 = 0.1;
  std::uint64_t seed = 0;

  double bias(int step) const;
  double noise_scale(int step) const;
};

/// clamp(base + beta(step) (skip_density - 0.5) + sigma(step) xi, 0, 1) with
/// beta(step) = beta0 exp(-step/T), sigma(step) = sigma0 exp(-step/T), and xi
/// a standard normal keyed by (seed, arch, step).
class ProxyOracle : public RewardOracle {
 public:
  ProxyOracle(std::shared_ptr<RewardOracle> base, ProxyBiasSpec spec);

  double evaluate(const ArchitectureVector& arch, int step) override;
  bool pure() const override { return true; }
  const ProxyBiasSpec& spec() const { return spec_; }
  RewardOracle& base() { return *base_; }

 private:
  std::shared_ptr<RewardOracle> base_;
  ProxyBiasSpec spec_;
};

std::uint64_t arch_hash(const ArchitectureVector& arch);

inline constexpr std::uint64_t kEnumerationLimit = std::uint64_t{1} << 24;

/// Mixed-radix index over the canonical decision sequence, first decision
/// most significant. Increasing index is increasing canonical order.
class ArchEnumerator {
 public:
  // Throws GuardError when the space has more than `limit` architectures.
  explicit ArchEnumerator(const SearchSpaceSpec& space, std::uint64_t limit = kEnumerationLimit);

  std::uint64_t size() const { return size_; }
  ArchitectureVector decode(std::uint64_t index) const;
  std::uint64_t encode(const ArchitectureVector& arch) const;

 private:
  struct Digit {
    bool is_op;
    int position;  // node index (0-based) or edge index
    int radix;
  };
  SearchSpaceSpec space_;
  std::vector<Digit> digits_;  // least significant first
  std::uint64_t size_ = 1;
};

struct RankedArch {
  std::uint64_t index = 0;
  double reward = 0.0;
};

struct EnumerationResult {
  ArchitectureVector best_arch;
  double best_reward = 0.0;
  std::uint64_t count = 0;
  // Sorted by reward descending, then canonical order. Empty unless requested.
  std::vector<RankedArch> ranking;
};

// Exhaustive scan of a pure oracle at step 0. Ties go to the canonically
// smallest architecture. Parallel over `workers` threads.
EnumerationResult enumerate_optimum(RewardOracle& oracle, const SearchSpaceSpec& space, bool with_ranking = false,
                                    int workers = 0, std::uint64_t limit = kEnumerationLimit);
EnumerationResult enumerate_optimum(const TabularOracleSpec& spec, const SearchSpaceSpec& space,
                                    bool with_ranking = false, int workers = 0);

}  // namespace nar
