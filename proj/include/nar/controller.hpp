#pragma once

// Autoregressive LSTM policy over architecture decisions.
//
// Decisions are emitted node-major: node j's operator, then one 2-way skip
// decision per candidate edge (t, j) in ascending t. Every decision's token
// is embedded and fed back before the next decision, so skip decisions of
// node j are conditioned on node j's operator.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nar/archspace.hpp"
#include "nar/rng.hpp"

namespace nar {

enum class SamplingMode { Joint, FixedSkip };

const char* to_string(SamplingMode mode);

struct ControllerConfig {
  int hidden = 64;
  int num_ops = 0;
  int n_nodes = 0;
  SamplingMode mode = SamplingMode::Joint;
  // logits = u / temperature, or tanh_constant * tanh(u / temperature) when
  // tanh_constant > 0.
  double temperature = 1.0;
  double tanh_constant = 0.0;
};

/// Offsets of each parameter group inside the flat parameter vector.
///
/// Token rows of the embedding: 0 is the start token, 1..K the operators,
/// K+1 and K+2 the skip values 0 and 1. LSTM gates are stacked i, f, g, o
/// and act on the concatenation [input; hidden]. All matrices are row-major.
struct ParamLayout {
  int hidden = 0;
  int num_ops = 0;
  std::size_t embed = 0, lstm_w = 0, lstm_b = 0, op_w = 0, op_b = 0, skip_w = 0, skip_b = 0;
  std::size_t size = 0;

  static ParamLayout make(int hidden, int num_ops);

  int start_token() const { return 0; }
  int op_token(int k) const { return 1 + k; }
  int skip_token(int v) const { return num_ops + 1 + v; }
  int token_count() const { return num_ops + 3; }

  // [begin, end) ranges of the two output heads (weights and biases).
  std::pair<std::size_t, std::size_t> op_head() const { return {op_w, skip_w}; }
  std::pair<std::size_t, std::size_t> skip_head() const { return {skip_w, size}; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ControllerParams {
 public:
  ControllerParams(ControllerConfig config, std::uint64_t seed, std::vector<double> values);

  const ControllerConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  // Structured views alias the flat storage.
  Eigen::Map<const RowMatrix> embedding() const { return cmat(layout_.embed, layout_.token_count(), hidden()); }
  Eigen::Map<const RowMatrix> lstm_weights() const { return cmat(layout_.lstm_w, 4 * hidden(), 2 * hidden()); }
  Eigen::Map<const Eigen::VectorXd> lstm_bias() const { return cvec(layout_.lstm_b, 4 * hidden()); }
  Eigen::Map<const RowMatrix> op_weights() const { return cmat(layout_.op_w, layout_.num_ops, hidden()); }
  Eigen::Map<const Eigen::VectorXd> op_bias() const { return cvec(layout_.op_b, layout_.num_ops); }
  Eigen::Map<const RowMatrix> skip_weights() const { return cmat(layout_.skip_w, 2, hidden()); }
  Eigen::Map<const Eigen::VectorXd> skip_bias() const { return cvec(layout_.skip_b, 2); }

  bool operator==(const ControllerParams& other) const {
    return values_ == other.values_ && seed_ == other.seed_;
  }

 private:
  int hidden() const { return layout_.hidden; }
  Eigen::Map<const RowMatrix> cmat(std::size_t off, int r, int c) const {
    return Eigen::Map<const RowMatrix>(values_.data() + off, r, c);
  }
  Eigen::Map<const Eigen::VectorXd> cvec(std::size_t off, int n) const {
    return Eigen::Map<const Eigen::VectorXd>(values_.data() + off, n);
  }

  ControllerConfig config_;
  std::uint64_t seed_ = 0;
  ParamLayout layout_;
  std::vector<double> values_;
};

// P = (K+3)H + 8H^2 + 4H + KH + K + 2H + 2.
std::size_t parameter_count(int hidden, int num_ops);

// Uniform in [-0.1, 0.1], deterministic in seed.
ControllerParams init_controller(const ControllerConfig& config, std::uint64_t seed);
ControllerParams zero_controller(const ControllerConfig& config);

enum class DecisionKind { Operator, Skip };

struct Decision {
  DecisionKind kind = DecisionKind::Operator;
  int node = 0;   // 1-indexed node j
  int edge = -1;  // candidate-edge index for skip decisions
  int choice = 0;
  double log_prob = 0.0;
  std::vector<double> probs;
  // Forced decisions are fed to the controller but are not policy actions:
  // they carry no log-probability mass and receive no gradient.
  bool forced = false;
};

struct DecisionTrace {
  std::vector<Decision> decisions;

  // Sum over non-forced decisions.
  double total_log_prob() const;
};

// Values pinned during sampling (alternating search phases).
struct Forcing {
  std::optional<std::vector<int>> ops;
  std::optional<SkipMask> skips;
};

struct SamplingPlan {
  SamplingMode mode = SamplingMode::Joint;
  Forcing forcing;
};

/// Forward pass with everything BPTT needs.
struct Rollout {
  struct Step {
    int input_token = 0;
    Eigen::VectorXd h_prev, c_prev;
    Eigen::VectorXd i, f, g, o, c, tanh_c, h;
    Eigen::VectorXd pre_logits, logits;
  };
  DecisionTrace trace;
  ArchitectureVector arch;
  std::vector<Step> steps;
};

// Samples with `rng`. FixedSkip requires spec.frozen_skips(); throws
// std::invalid_argument otherwise.
Rollout sample_rollout(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                       Rng& rng);
// Replays a given architecture.
Rollout replay_rollout(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                       const ArchitectureVector& arch);
// Takes the most probable value at every free decision (first index on ties).
Rollout greedy_rollout(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan);

std::pair<ArchitectureVector, DecisionTrace> sample(const ControllerParams& params, const SearchSpaceSpec& spec,
                                                    SamplingMode mode, Rng& rng);

struct LogProb {
  double total = 0.0;
  DecisionTrace trace;
};

LogProb log_prob(const ControllerParams& params, const ArchitectureVector& arch, const SearchSpaceSpec& spec,
                 const SamplingPlan& plan);

/// Backpropagates per-decision seeds d(objective)/d(logits) through the
/// heads and the LSTM. `seeds[d]` must have one entry per choice of decision
/// d; entries for forced decisions are ignored.
std::vector<double> backward(const ControllerParams& params, const Rollout& rollout,
                             std::span<const Eigen::VectorXd> seeds);

// Seeds for d log p(choice) / d logits, i.e. onehot - p.
std::vector<Eigen::VectorXd> log_prob_seeds(const Rollout& rollout);

std::vector<double> grad_log_prob(const ControllerParams& params, const ArchitectureVector& arch,
                                  const SearchSpaceSpec& spec, const SamplingPlan& plan);

// Gradient of the summed entropy of all free decisions.
std::vector<double> grad_entropy(const ControllerParams& params, const Rollout& rollout);

// Arithmetic used to evaluate the difference quotient. Quad runs an
// independent scalar forward pass in binary128; Double reuses the production
// forward pass and is limited by double roundoff (~1e-10 absolute).
enum class FdArithmetic { Quad, Double };

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences of log_prob over every coordinate, compared to
/// grad_log_prob with error |a - n| / max(|a|, |n|, 1e-8). Coordinates are
/// distributed over `workers` OpenMP threads.
FiniteDiffReport finite_diff_check(const ControllerParams& params, const ArchitectureVector& arch,
                                   const SearchSpaceSpec& spec, const SamplingPlan& plan, double h,
                                   FdArithmetic arithmetic = FdArithmetic::Quad, int workers = 0);

// Per-decision mean entropy of the operator distributions along the greedy
// decode path.
double mean_operator_entropy(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan);

/// Checkpoint: "NARCKPT1\n", one line of JSON header {config, seed, P},
/// then P little-endian IEEE-754 doubles.
void save_checkpoint(const ControllerParams& params, const std::filesystem::path& path);
ControllerParams load_checkpoint(const std::filesystem::path& path);

}  // namespace nar
