#pragma once

// Multi-seed experiments shared by the command-line tool and the acceptance
// suite.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "nar/controller.hpp"
#include "nar/nar.hpp"

namespace nar {

// Adds `offset` to every "seed" field in a JSON tree.
nlohmann::json offset_seeds(nlohmann::json j, std::uint64_t offset);

// Replicate r: master seed base.seed + r, oracle seeds shifted by r.
SearchConfig replicate(const SearchConfig& base, int r);

struct GradcheckSettings {
  int points = 20;  // point 0 is the all-zero parameter vector
  double h = 1e-6;
  double tolerance = 1e-5;
  FdArithmetic arithmetic = FdArithmetic::Quad;
  std::vector<SamplingMode> modes{SamplingMode::Joint, SamplingMode::FixedSkip};
  int hidden = 8;
  std::uint64_t seed = 0;
};

GradcheckSettings gradcheck_from_json(const nlohmann::json& j);

struct GradcheckReport {
  SamplingMode mode = SamplingMode::Joint;
  int points = 0;
  double max_rel_error = 0.0;
  double zero_point_error = 0.0;
  std::vector<double> point_errors;
  bool pass = false;
};

/// Point p > 0 draws parameters U[-a, a] with a cycling through 0.1, 0.5, 1
/// and an architecture sampled from them. Fixed-skip checks use the space's
/// frozen mask, or the residual mask if it has none.
std::vector<GradcheckReport> run_gradcheck(const SearchSpaceSpec& space, const GradcheckSettings& settings,
                                           int workers = 0);

struct SeriesStats {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
};

SeriesStats series_stats(const std::vector<double>& xs);

struct GradNoiseRun {
  std::uint64_t seed = 0;
  GradLog log;
  SeriesStats op, skip;
};

struct GradNoiseReport {
  std::vector<GradNoiseRun> runs;
  int skip_noisier = 0;  // runs with skip variance > op variance
};

// Joint search per replicate; compares the variance of the two norm series.
GradNoiseReport grad_noise_demo(const SearchConfig& base, int seeds, int workers = 0);

struct BiasRun {
  std::uint64_t seed = 0;
  double joint_density = 0.0;  // derived arch of the joint search
  double joint_best_density = 0.0;
  double nar_density = 0.0;  // derived arch of the fixed-skip search
  double frozen_density = 0.0;
  double optimum_density = 0.0;  // enumerated optimum of the unbiased base oracle
  double optimum_reward = 0.0;
};

struct BiasReport {
  std::vector<BiasRun> runs;
  int joint_denser = 0;
  int nar_on_mask = 0;
};

/// `base` must use a proxy oracle and carry a frozen mask for the NAR run.
/// The joint run ignores the mask.
BiasReport bias_demo(const SearchConfig& base, int seeds, int workers = 0);

struct AscentReport {
  std::vector<AscentTrace> traces;
  int monotone = 0;
  int terminated = 0;  // within max_phases
  int max_phases_seen = 0;
  int reached_global = 0;
};

/// Random tabular instances (generator seeds seed + i) with uniformly random
/// starting architectures.
AscentReport ascent_demo(const SearchSpaceSpec& space, const TabularGenParams& gen, int instances, int max_phases,
                     std::uint64_t seed);

struct PretrainRun {
  std::uint64_t seed = 0;
  double entropy_without = 0.0;
  double entropy_with = 0.0;
  std::vector<double> pretrain_losses;
};

struct PretrainReport {
  int epochs = 0;
  std::vector<PretrainRun> runs;
  int with_not_lower = 0;  // runs with entropy_with >= entropy_without
};

// `base` must use the supernet oracle; runs each replicate with 0 and
// `epochs` pretraining epochs.
PretrainReport pretrain_demo(const SearchConfig& base, int epochs, int seeds, int workers = 0);

nlohmann::json to_json(const GradcheckReport& r);
nlohmann::json to_json(const GradNoiseReport& r);
nlohmann::json to_json(const BiasReport& r);
nlohmann::json to_json(const AscentReport& r);
nlohmann::json to_json(const PretrainReport& r);

}  // namespace nar
