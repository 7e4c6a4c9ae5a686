#pragma once

// Toy weight-sharing supernet. Every node holds one parameter bank per
// parametric operator; a sampled architecture picks one bank (or a fixed
// pooling transform) per node and trains only what it picked.

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "nar/archspace.hpp"
#include "nar/oracles.hpp"

namespace nar {

// Two balanced classes with means +-separation/2 along a random unit
// direction and isotropic noise.
struct DatasetSpec {
  int n_train = 512;
  int n_val = 256;
  double separation = 2.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  int width = 0;
  std::vector<double> x_train, y_train;  // x row-major, n_train x width
  std::vector<double> x_val, y_val;

  int n_train() const { return static_cast<int>(y_train.size()); }
  int n_val() const { return static_cast<int>(y_val.size()); }
};

Dataset make_dataset(const DatasetSpec& spec, int width);

struct ToySupernetSpec {
  int feature_width = 8;  // even
  DatasetSpec data;
  int child_steps = 50;
  double lr = 0.05;
  int batch_size = 32;
  int pretrain_archs_per_epoch = 16;
  // Bank weights start as N(0, init_scale^2 / F); biases at zero.
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

ToySupernetSpec supernet_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ToySupernetSpec& spec);

/// Node j's input is the previous node's output (the data for node 1) plus
/// the outputs of its active skip sources. Parametric operators alternate
/// between affine+ReLU and affine+tanh in vocabulary order; non-parametric
/// ones pair feature i with feature i+F/2 and take the max ("max" in the
/// name) or the mean. A shared linear head produces the class logit. The head
/// starts at zero, so an untrained supernet predicts class 0 everywhere.
///
/// Not pure: evaluate() trains the selected banks before measuring
/// validation accuracy.
class SupernetOracle : public RewardOracle {
 public:
  SupernetOracle(SearchSpaceSpec space, ToySupernetSpec spec);

  double evaluate(const ArchitectureVector& arch, int step) override;
  // Children train concurrently from one snapshot of the banks; their updates
  // are then applied in sample-index order.
  std::vector<double> evaluate_batch(std::span<const ArchitectureVector> archs, int step, int workers) override;
  bool pure() const override { return false; }

  // Trains on uniformly random architectures for `epochs` epochs. Returns
  // epochs+1 entries: the mean training-split loss over a fixed set of probe
  // architectures before training and after each epoch.
  std::vector<double> pretrain(int epochs, std::uint64_t seed);

  double validation_accuracy(const ArchitectureVector& arch) const;
  double train_loss(const ArchitectureVector& arch) const;

  bool has_bank(int node, int op) const;
  // FNV hash of a bank's values (node 1-indexed).
  std::uint64_t bank_checksum(int node, int op) const;
  std::uint64_t head_checksum() const;

  const SearchSpaceSpec& space() const { return space_; }
  const ToySupernetSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }
  std::span<const double> parameters() const { return params_; }

 private:
  enum class OpKind { Relu, Tanh, MaxPair, MeanPair };

  void train_child(std::vector<double>& params, const ArchitectureVector& arch, std::uint64_t seed) const;
  double forward(std::span<const double> params, const ArchitectureVector& arch, const double* x,
                 std::vector<std::vector<double>>* acts) const;
  std::size_t bank_offset(int node, int op) const;
  std::size_t bank_size() const;
  std::vector<ArchitectureVector> random_archs(int count, std::uint64_t seed) const;

  SearchSpaceSpec space_;
  ToySupernetSpec spec_;
  Dataset data_;
  std::vector<OpKind> kinds_;
  std::vector<int> param_slot_;  // op -> index among parametric ops, -1 otherwise
  int n_param_ops_ = 0;
  std::size_t head_ = 0;
  std::vector<double> params_;
  std::uint64_t evaluations_ = 0;
};

}  // namespace nar
