#include "nar/experiments.hpp"

#include <algorithm>

#include "nar/supernet.hpp"

namespace nar {

nlohmann::json offset_seeds(nlohmann::json j, std::uint64_t offset) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "seed" && it.value().is_number_integer())
        it.value() = it.value().get<std::uint64_t>() + offset;
      else
        it.value() = offset_seeds(it.value(), offset);
    }
  } else if (j.is_array()) {
    for (auto& v : j) v = offset_seeds(v, offset);
  }
  return j;
}

SearchConfig replicate(const SearchConfig& base, int r) {
  SearchConfig c = base;
  c.seed = base.seed + static_cast<std::uint64_t>(r);
  c.oracle = offset_seeds(base.oracle, static_cast<std::uint64_t>(r));
  return c;
}

GradcheckSettings gradcheck_from_json(const nlohmann::json& j) {
  GradcheckSettings s;
  if (j.is_null()) return s;
  if (!j.is_object()) throw ConfigError("gradcheck: expected object");
  try {
    s.points = j.value("points", s.points);
    s.h = j.value("h", s.h);
    s.tolerance = j.value("tolerance", s.tolerance);
    s.hidden = j.value("hidden", s.hidden);
    s.seed = j.value("seed", s.seed);
    const auto arith = j.value("arithmetic", std::string("quad"));
    if (arith == "quad")
      s.arithmetic = FdArithmetic::Quad;
    else if (arith == "double")
      s.arithmetic = FdArithmetic::Double;
    else
      throw ConfigError("gradcheck.arithmetic: expected quad or double");
    if (j.contains("modes")) {
      s.modes.clear();
      for (const auto& m : j.at("modes")) {
        const auto name = m.get<std::string>();
        if (name == "joint")
          s.modes.push_back(SamplingMode::Joint);
        else if (name == "fixed_skip")
          s.modes.push_back(SamplingMode::FixedSkip);
        else
          throw ConfigError("gradcheck.modes: expected joint or fixed_skip");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gradcheck: ") + e.what());
  }
  if (s.points < 1) throw ConfigError("gradcheck.points: must be >= 1");
  if (!(s.h > 0.0)) throw ConfigError("gradcheck.h: must be > 0");
  if (!(s.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance: must be > 0");
  if (s.hidden < 1) throw ConfigError("gradcheck.hidden: must be >= 1");
  return s;
}

std::vector<GradcheckReport> run_gradcheck(const SearchSpaceSpec& space_in, const GradcheckSettings& st,
                                           int workers) {
  const auto open = space_in.with_frozen(std::nullopt);
  const auto fixed = space_in.with_frozen(space_in.frozen_skips().value_or(residual_skips(open.topology())));
  std::vector<GradcheckReport> out;
  for (const auto mode : st.modes) {
    const auto& space = mode == SamplingMode::FixedSkip ? fixed : open;
    const SamplingPlan plan{mode, {}};
    const ControllerConfig cfg{st.hidden, space.num_ops(), space.n_nodes(), mode, 1.0, 0.0};
    GradcheckReport rep;
    rep.mode = mode;
    rep.points = st.points;
    for (int p = 0; p < st.points; ++p) {
      Rng rng(derive_seed(st.seed, {0x67726164ULL, static_cast<std::uint64_t>(mode), static_cast<std::uint64_t>(p)}));
      ControllerParams params = zero_controller(cfg);
      if (p > 0) {
        static constexpr double kScales[] = {0.1, 0.5, 1.0};
        const double a = kScales[p % 3];
        for (auto& v : params.values()) v = rng.uniform(-a, a);
      }
      const auto arch = sample_rollout(params, space, plan, rng).arch;
      const auto r = finite_diff_check(params, arch, space, plan, st.h, st.arithmetic, workers);
      rep.point_errors.push_back(r.max_rel_error);
      if (p == 0) rep.zero_point_error = r.max_rel_error;
      rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
    }
    rep.pass = rep.max_rel_error < st.tolerance;
    out.push_back(std::move(rep));
  }
  return out;
}

SeriesStats series_stats(const std::vector<double>& xs) {
  SeriesStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return s;
  for (double x : xs) s.variance += (x - s.mean) * (x - s.mean);
  s.variance /= static_cast<double>(xs.size() - 1);
  return s;
}

GradNoiseReport grad_noise_demo(const SearchConfig& base, int seeds, int workers) {
  if (base.mode != SearchMode::Joint) throw ConfigError("fig1 demo needs mode joint");
  GradNoiseReport rep;
  for (int r = 0; r < seeds; ++r) {
    const auto cfg = replicate(base, r);
    auto res = run_search(cfg, workers);
    GradNoiseRun run;
    run.seed = cfg.seed;
    std::vector<double> op, skip;
    for (const auto& rec : res.grad_log.records) {
      op.push_back(rec.op_grad_norm);
      skip.push_back(rec.skip_grad_norm);
    }
    run.op = series_stats(op);
    run.skip = series_stats(skip);
    run.log = std::move(res.grad_log);
    if (run.skip.variance > run.op.variance) ++rep.skip_noisier;
    rep.runs.push_back(std::move(run));
  }
  return rep;
}

BiasReport bias_demo(const SearchConfig& base, int seeds, int workers) {
  if (base.oracle.value("kind", std::string()) != "proxy") throw ConfigError("bias demo needs a proxy oracle");
  if (!base.space.fixed_skip()) throw ConfigError("bias demo needs space.frozen_skips for the NAR run");
  BiasReport rep;
  for (int r = 0; r < seeds; ++r) {
    auto joint = replicate(base, r);
    joint.mode = SearchMode::Joint;
    auto nar = joint;
    nar.mode = SearchMode::NarFixedSkip;
    const auto jr = run_search(joint, workers);
    const auto nr = run_search(nar, workers);

    const auto open = base.space.with_frozen(std::nullopt);
    const auto base_oracle = make_oracle(joint.oracle.value("base", nlohmann::json{{"kind", "tabular"}}), open);
    const auto opt = enumerate_optimum(*base_oracle, open, false, workers);

    BiasRun run;
    run.seed = joint.seed;
    run.joint_density = skip_density(jr.derived_arch);
    run.joint_best_density = skip_density(jr.best_arch);
    run.nar_density = skip_density(nr.derived_arch);
    run.frozen_density = skip_density({{}, *base.space.frozen_skips()});
    run.optimum_density = skip_density(opt.best_arch);
    run.optimum_reward = opt.best_reward;
    if (run.joint_density > run.optimum_density) ++rep.joint_denser;
    bool on_mask = nr.derived_arch.skips == *base.space.frozen_skips();
    for (const auto& a : nr.evaluated) on_mask = on_mask && a.skips == *base.space.frozen_skips();
    if (on_mask) ++rep.nar_on_mask;
    rep.runs.push_back(run);
  }
  return rep;
}

AscentReport ascent_demo(const SearchSpaceSpec& space_in, const TabularGenParams& gen, int instances, int max_phases,
                     std::uint64_t seed) {
  const auto space = space_in.with_frozen(std::nullopt);
  AscentReport rep;
  for (int i = 0; i < instances; ++i) {
    auto g = gen;
    g.seed = seed + static_cast<std::uint64_t>(i);
    TabularOracle oracle(generate_tabular(space, g));
    Rng rng(derive_seed(g.seed, {0x696e6974ULL}));
    ArchitectureVector init;
    for (int j = 0; j < space.n_nodes(); ++j) init.ops.push_back(rng.below(space.num_ops()));
    for (int e = 0; e < space.edge_count(); ++e) init.skips.push_back(static_cast<std::uint8_t>(rng.below(2)));
    auto trace = exact_alternating_ascent(oracle, space, init);
    bool mono = true;
    for (std::size_t s = 1; s < trace.steps.size(); ++s) mono = mono && trace.steps[s].reward >= trace.steps[s - 1].reward;
    if (mono) ++rep.monotone;
    if (trace.phases_run <= max_phases) ++rep.terminated;
    rep.max_phases_seen = std::max(rep.max_phases_seen, trace.phases_run);
    const auto opt = enumerate_optimum(oracle, space, false, 1);
    if (trace.steps.back().reward == opt.best_reward) ++rep.reached_global;
    rep.traces.push_back(std::move(trace));
  }
  return rep;
}

PretrainReport pretrain_demo(const SearchConfig& base, int epochs, int seeds, int workers) {
  if (base.oracle.value("kind", std::string()) != "supernet") throw ConfigError("pretrain demo needs the supernet oracle");
  if (epochs < 1) throw ConfigError("pretrain demo: epochs must be >= 1");
  PretrainReport rep;
  rep.epochs = epochs;
  for (int r = 0; r < seeds; ++r) {
    auto cfg = replicate(base, r);
    cfg.pretrain_epochs = 0;
    const auto without = run_search(cfg, workers);
    cfg.pretrain_epochs = epochs;
    const auto with = run_search(cfg, workers);
    PretrainRun run{cfg.seed, without.final_op_entropy, with.final_op_entropy, with.pretrain_losses};
    if (run.entropy_with >= run.entropy_without) ++rep.with_not_lower;
    rep.runs.push_back(std::move(run));
  }
  return rep;
}

nlohmann::json to_json(const GradcheckReport& r) {
  return {{"mode", to_string(r.mode)},
          {"points", r.points},
          {"max_rel_error", r.max_rel_error},
          {"zero_point_error", r.zero_point_error},
          {"point_errors", r.point_errors},
          {"pass", r.pass}};
}

nlohmann::json to_json(const GradNoiseReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.runs)
    runs.push_back({{"seed", x.seed},
                    {"op_mean", x.op.mean},
                    {"op_variance", x.op.variance},
                    {"skip_mean", x.skip.mean},
                    {"skip_variance", x.skip.variance},
                    {"skip_noisier", x.skip.variance > x.op.variance}});
  return {{"demo", "fig1"},
          {"runs", runs},
          {"skip_noisier", r.skip_noisier},
          {"verdict", "skip variance > op variance: " + std::to_string(r.skip_noisier) + "/" +
                          std::to_string(r.runs.size())}};
}

nlohmann::json to_json(const BiasReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.runs)
    runs.push_back({{"seed", x.seed},
                    {"joint_density", x.joint_density},
                    {"joint_best_density", x.joint_best_density},
                    {"nar_density", x.nar_density},
                    {"frozen_density", x.frozen_density},
                    {"optimum_density", x.optimum_density},
                    {"optimum_reward", x.optimum_reward}});
  return {{"demo", "bias"},
          {"runs", runs},
          {"joint_denser", r.joint_denser},
          {"nar_on_mask", r.nar_on_mask},
          {"verdict", "joint denser than optimum: " + std::to_string(r.joint_denser) + "/" +
                          std::to_string(r.runs.size())}};
}

nlohmann::json to_json(const AscentReport& r) {
  const auto n = std::to_string(r.traces.size());
  nlohmann::json lengths = nlohmann::json::array();
  for (const auto& t : r.traces) lengths.push_back(t.steps.size());
  return {{"demo", "eq11"},
          {"instances", r.traces.size()},
          {"monotone", r.monotone},
          {"terminated", r.terminated},
          {"max_phases_seen", r.max_phases_seen},
          {"reached_global", r.reached_global},
          {"trace_lengths", lengths},
          {"verdict", "monotone: " + std::to_string(r.monotone) + "/" + n}};
}

nlohmann::json to_json(const PretrainReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.runs)
    runs.push_back({{"seed", x.seed},
                    {"entropy_without", x.entropy_without},
                    {"entropy_with", x.entropy_with},
                    {"pretrain_losses", x.pretrain_losses}});
  return {{"demo", "pretrain"},
          {"epochs", r.epochs},
          {"runs", runs},
          {"with_not_lower", r.with_not_lower},
          {"verdict", "entropy with pretrain >= without: " + std::to_string(r.with_not_lower) + "/" +
                          std::to_string(r.runs.size())}};
}

}  // namespace nar
