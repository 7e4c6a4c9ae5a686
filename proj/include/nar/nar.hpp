#pragma once

// Search strategies: operator-only refinement with frozen skips, alternating
// operator/skip phases, joint search, and exact alternating coordinate ascent.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nar/archspace.hpp"
#include "nar/controller.hpp"
#include "nar/oracles.hpp"
#include "nar/pgtrainer.hpp"

namespace nar {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SearchMode { NarFixedSkip, Alternating, Joint };

const char* to_string(SearchMode mode);
SearchMode search_mode_from_string(const std::string& s);

struct SearchConfig {
  // For nar_fixed_skip the frozen mask is the refined network's skips; for
  // alternating it seeds the first operator phase (all zero if absent).
  SearchSpaceSpec space{OperatorVocabulary::face_four(), 1};
  SearchMode mode = SearchMode::NarFixedSkip;
  nlohmann::json oracle = {{"kind", "tabular"}};
  std::optional<std::vector<int>> initial_ops;

  int hidden = 64;
  double temperature = 1.0;
  double tanh_constant = 0.0;

  int batch_size = 32;
  int updates = 500;
  int block = 100;
  int pretrain_epochs = 0;
  std::uint64_t seed = 0;

  double lr = 3.5e-4;
  bool baseline = true;
  double baseline_decay = 0.95;
  double entropy_weight = 0.0;
};

// Throws ConfigError with a path-qualified message.
SearchConfig search_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SearchConfig& config);

/// Builds the oracle described by `j` ("kind": tabular | proxy | supernet).
/// `space` is used without its frozen mask.
std::shared_ptr<RewardOracle> make_oracle(const nlohmann::json& j, const SearchSpaceSpec& space);

struct HistoryEntry {
  int step = 0;
  char phase = 'O';  // O or S
  double mean_reward = 0.0;
  double best_so_far = 0.0;
  double op_grad_norm = 0.0;
  double skip_grad_norm = 0.0;
};

struct PhaseRecord {
  char kind = 'O';
  int first_step = 0;
  int last_step = 0;  // inclusive
  ArchitectureVector incumbent;
  double incumbent_reward = 0.0;
};

struct SearchResult {
  SearchMode mode = SearchMode::NarFixedSkip;
  ArchitectureVector best_arch;
  double best_reward = 0.0;
  ArchitectureVector derived_arch;
  std::vector<HistoryEntry> history;
  std::vector<PhaseRecord> phases;
  GradLog grad_log;
  std::vector<double> pretrain_losses;
  double final_op_entropy = 0.0;
  std::vector<ArchitectureVector> evaluated;  // every sampled arch, in order
  std::optional<ControllerParams> params;
};

SearchResult nar_search(const SearchConfig& config, int workers = 0);
SearchResult alternating_search(const SearchConfig& config, int workers = 0);
SearchResult joint_search(const SearchConfig& config, int workers = 0);
// Dispatches on config.mode.
SearchResult run_search(const SearchConfig& config, int workers = 0);

// Same as run_search but with a caller-owned oracle (used by experiments that
// need to inspect the oracle afterwards).
SearchResult run_search(const SearchConfig& config, RewardOracle& oracle, int workers = 0);

nlohmann::json to_json(const SearchResult& result);

struct AscentStep {
  char phase = 'I';  // I (initial), O or S
  ArchitectureVector arch;
  double reward = 0.0;
};

struct AscentTrace {
  std::vector<AscentStep> steps;  // initial arch, then one entry per improving phase
  int phases_run = 0;
  bool operator_block_enumerated = true;
  bool skip_block_enumerated = true;
};

inline constexpr std::uint64_t kBlockEnumerationLimit = std::uint64_t{1} << 20;

/// Alternately maximizes the exact reward over all operators (skips fixed)
/// and over all skips (operators fixed) until a full pass changes nothing.
/// A block is enumerated when it has at most 2^20 members, otherwise it is
/// swept one node (or edge) at a time. Moves need strict improvement, and
/// within a block the canonically smallest maximizer wins.
AscentTrace exact_alternating_ascent(RewardOracle& oracle, const SearchSpaceSpec& space,
                                     const ArchitectureVector& init);
AscentTrace exact_alternating_ascent(const TabularOracleSpec& oracle, const SearchSpaceSpec& space,
                                     const ArchitectureVector& init);

// Columns: phase,arch,reward (arch as arch_key). With `instance`, a leading
// instance column is written for every trace.
void write_trace_csv(const std::vector<AscentTrace>& traces, const std::filesystem::path& path, bool instance);

}  // namespace nar
