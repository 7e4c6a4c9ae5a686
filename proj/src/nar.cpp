#include "nar/nar.hpp"

#include <cstdio>
#include <limits>

#include "nar/supernet.hpp"

namespace nar {

const char* to_string(SearchMode mode) {
  switch (mode) {
    case SearchMode::NarFixedSkip: return "nar_fixed_skip";
    case SearchMode::Alternating: return "alternating";
    case SearchMode::Joint: return "joint";
  }
  return "?";
}

SearchMode search_mode_from_string(const std::string& s) {
  if (s == "nar_fixed_skip") return SearchMode::NarFixedSkip;
  if (s == "alternating") return SearchMode::Alternating;
  if (s == "joint") return SearchMode::Joint;
  throw ConfigError("mode: expected nar_fixed_skip, alternating or joint, got \"" + s + "\"");
}

namespace {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

nlohmann::json without_kind(const nlohmann::json& j) {
  nlohmann::json out = j;
  out.erase("kind");
  return out;
}

}  // namespace

std::shared_ptr<RewardOracle> make_oracle(const nlohmann::json& j, const SearchSpaceSpec& space_in) {
  if (!j.is_object()) throw ConfigError("oracle: expected object");
  const auto space = space_in.with_frozen(std::nullopt);
  const std::string kind = get_or<std::string>(j, "kind", "tabular", "oracle");
  try {
    if (kind == "tabular") return std::make_shared<TabularOracle>(tabular_from_json(without_kind(j), space));
    if (kind == "proxy") {
      const auto base = make_oracle(j.value("base", nlohmann::json{{"kind", "tabular"}}), space);
      ProxyBiasSpec spec;
      spec.beta0 = get_or(j, "beta0", spec.beta0, "oracle");
      spec.decay = get_or(j, "decay", spec.decay, "oracle");
      spec.sigma0 = get_or(j, "sigma0", spec.sigma0, "oracle");
      spec.seed = get_or(j, "seed", spec.seed, "oracle");
      return std::make_shared<ProxyOracle>(base, spec);
    }
    if (kind == "supernet") return std::make_shared<SupernetOracle>(space, supernet_from_json(without_kind(j)));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("oracle: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("oracle: ") + e.what());
  }
  throw ConfigError("oracle.kind: expected tabular, proxy or supernet, got \"" + kind + "\"");
}

SearchConfig search_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (!j.contains("mode")) throw ConfigError("mode: missing");
  if (!j.contains("space")) throw ConfigError("space: missing");
  SearchConfig c;
  c.mode = search_mode_from_string(get_or<std::string>(j, "mode", "", "config"));
  try {
    c.space = space_from_json(j.at("space"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("space: ") + e.what());
  }
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  c.oracle = j.value("oracle", nlohmann::json{{"kind", "tabular"}});
  if (j.contains("initial_arch")) {
    try {
      c.initial_ops = parse_arch_vector(get_or<std::string>(j, "initial_arch", "", "config"), c.space).ops;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("initial_arch: ") + e.what());
    }
  }
  const auto ctrl = j.value("controller", nlohmann::json::object());
  c.hidden = get_or(ctrl, "hidden", c.hidden, "controller");
  c.temperature = get_or(ctrl, "temperature", c.temperature, "controller");
  c.tanh_constant = get_or(ctrl, "tanh_constant", c.tanh_constant, "controller");
  const auto s = j.value("search", nlohmann::json::object());
  c.updates = get_or(s, "updates", c.updates, "search");
  c.batch_size = get_or(s, "batch_size", c.batch_size, "search");
  c.block = get_or(s, "block", c.block, "search");
  c.pretrain_epochs = get_or(s, "pretrain_epochs", c.pretrain_epochs, "search");
  c.lr = get_or(s, "lr", c.lr, "search");
  c.baseline = get_or(s, "baseline", c.baseline, "search");
  c.baseline_decay = get_or(s, "baseline_decay", c.baseline_decay, "search");
  c.entropy_weight = get_or(s, "entropy_weight", c.entropy_weight, "search");

  if (c.mode == SearchMode::NarFixedSkip && !c.space.fixed_skip())
    throw ConfigError("space.frozen_skips: nar_fixed_skip needs a frozen skip mask");
  if (c.hidden < 1) throw ConfigError("controller.hidden: must be >= 1");
  if (!(c.temperature > 0.0)) throw ConfigError("controller.temperature: must be > 0");
  if (c.tanh_constant < 0.0) throw ConfigError("controller.tanh_constant: must be >= 0");
  if (c.updates < 0) throw ConfigError("search.updates: must be >= 0");
  if (c.batch_size < 1) throw ConfigError("search.batch_size: must be >= 1");
  if (c.block < 1) throw ConfigError("search.block: must be >= 1");
  if (c.pretrain_epochs < 0) throw ConfigError("search.pretrain_epochs: must be >= 0");
  if (!(c.lr > 0.0)) throw ConfigError("search.lr: must be > 0");
  if (!(c.baseline_decay > 0.0 && c.baseline_decay < 1.0)) throw ConfigError("search.baseline_decay: must be in (0, 1)");
  if (c.entropy_weight < 0.0) throw ConfigError("search.entropy_weight: must be >= 0");
  make_oracle(c.oracle, c.space);  // validate early
  return c;
}

nlohmann::json to_json(const SearchConfig& c) {
  nlohmann::json j = {{"mode", to_string(c.mode)},
                      {"seed", c.seed},
                      {"space", to_json(c.space)},
                      {"oracle", c.oracle},
                      {"controller", {{"hidden", c.hidden}, {"temperature", c.temperature}, {"tanh_constant", c.tanh_constant}}},
                      {"search",
                       {{"updates", c.updates},
                        {"batch_size", c.batch_size},
                        {"block", c.block},
                        {"pretrain_epochs", c.pretrain_epochs},
                        {"lr", c.lr},
                        {"baseline", c.baseline},
                        {"baseline_decay", c.baseline_decay},
                        {"entropy_weight", c.entropy_weight}}}};
  if (c.initial_ops) j["initial_arch"] = serialize_arch_vector({*c.initial_ops, {}});
  return j;
}

namespace {

constexpr double kNoReward = -std::numeric_limits<double>::infinity();

struct Incumbent {
  ArchitectureVector arch;
  double reward = kNoReward;
};

class Engine {
 public:
  Engine(const SearchConfig& cfg, RewardOracle& oracle, int workers, SamplingMode controller_mode)
      : cfg_(cfg),
        oracle_(oracle),
        workers_(workers),
        params_(init_controller({cfg.hidden, cfg.space.num_ops(), cfg.space.n_nodes(), controller_mode,
                                 cfg.temperature, cfg.tanh_constant},
                                derive_seed(cfg.seed, {0x6374726cULL}))),
        rng_(derive_seed(cfg.seed, {0x736d706cULL})) {
    adam_.lr = cfg.lr;
    baseline_.decay = cfg.baseline_decay;
    result_.best_reward = kNoReward;
  }

  void pretrain() {
    if (cfg_.pretrain_epochs <= 0) return;
    if (auto* supernet = dynamic_cast<SupernetOracle*>(&oracle_))
      result_.pretrain_losses = supernet->pretrain(cfg_.pretrain_epochs, derive_seed(cfg_.seed, {0x70726574ULL}));
  }

  // One controller update; returns the best sample of the batch.
  Incumbent step(int s, const SearchSpaceSpec& spec, const SamplingPlan& plan, char phase) {
    const auto batch = collect_batch(params_, spec, plan, oracle_, cfg_.batch_size, s, rng_, workers_);
    std::optional<BaselineState> b;
    if (cfg_.baseline) {
      if (!baseline_.initialized) baseline_ = update_baseline(baseline_, batch);
      b = baseline_;
    }
    auto grad = reinforce_gradient(params_, spec, batch, b, workers_);
    if (cfg_.entropy_weight > 0.0) {
      const double w = cfg_.entropy_weight / static_cast<double>(batch.size());
      for (const auto& sm : batch.samples) {
        const auto ge = grad_entropy(params_, replay_rollout(params_, spec, plan, sm.arch));
        for (std::size_t c = 0; c < grad.size(); ++c) grad[c] += w * ge[c];
      }
    }
    if (cfg_.baseline && b) baseline_ = update_baseline(baseline_, batch);
    const auto rec = log_grad_magnitudes(grad, params_.layout(), s, result_.grad_log);
    update(params_, grad, adam_);

    Incumbent best;
    for (const auto& sm : batch.samples) {
      result_.evaluated.push_back(sm.arch);
      if (sm.reward > best.reward) best = {sm.arch, sm.reward};
      if (sm.reward > result_.best_reward) {
        result_.best_reward = sm.reward;
        result_.best_arch = sm.arch;
      }
    }
    result_.history.push_back(
        {s, phase, batch.mean_reward(), result_.best_reward, rec.op_grad_norm, rec.skip_grad_norm});
    return best;
  }

  SearchResult finish(SearchMode mode, ArchitectureVector derived, const SearchSpaceSpec& entropy_spec,
                      const SamplingPlan& entropy_plan) {
    result_.mode = mode;
    result_.derived_arch = std::move(derived);
    result_.final_op_entropy = mean_operator_entropy(params_, entropy_spec, entropy_plan);
    if (result_.history.empty()) {
      result_.best_arch = result_.derived_arch;
      result_.best_reward = oracle_.evaluate(result_.derived_arch, 0);
    }
    result_.params = params_;
    return std::move(result_);
  }

  const ControllerParams& params() const { return params_; }

 private:
  const SearchConfig& cfg_;
  RewardOracle& oracle_;
  int workers_;
  ControllerParams params_;
  Rng rng_;
  AdamState adam_;
  BaselineState baseline_;
  SearchResult result_;
};

SearchResult nar_impl(const SearchConfig& cfg, RewardOracle& oracle, int workers) {
  if (!cfg.space.fixed_skip()) throw ConfigError("nar_fixed_skip needs a frozen skip mask");
  Engine engine(cfg, oracle, workers, SamplingMode::FixedSkip);
  engine.pretrain();
  const SamplingPlan plan{SamplingMode::FixedSkip, {}};
  for (int s = 0; s < cfg.updates; ++s) engine.step(s, cfg.space, plan, 'O');
  auto derived = greedy_rollout(engine.params(), cfg.space, plan).arch;
  return engine.finish(SearchMode::NarFixedSkip, std::move(derived), cfg.space, plan);
}

SearchResult joint_impl(const SearchConfig& cfg, RewardOracle& oracle, int workers) {
  Engine engine(cfg, oracle, workers, SamplingMode::Joint);
  engine.pretrain();
  const auto space = cfg.space.with_frozen(std::nullopt);
  const SamplingPlan plan{SamplingMode::Joint, {}};
  for (int s = 0; s < cfg.updates; ++s) engine.step(s, space, plan, 'O');
  auto derived = greedy_rollout(engine.params(), space, plan).arch;
  return engine.finish(SearchMode::Joint, std::move(derived), space, plan);
}

SearchResult alternating_impl(const SearchConfig& cfg, RewardOracle& oracle, int workers) {
  Engine engine(cfg, oracle, workers, SamplingMode::Joint);
  engine.pretrain();
  const auto open = cfg.space.with_frozen(std::nullopt);
  Incumbent inc;
  inc.arch.ops = cfg.initial_ops.value_or(std::vector<int>(static_cast<std::size_t>(cfg.space.n_nodes()), 0));
  inc.arch.skips = cfg.space.frozen_skips().value_or(SkipMask(static_cast<std::size_t>(cfg.space.edge_count()), 0));
  std::vector<PhaseRecord> phases;

  char kind = 'O';
  for (int s = 0; s < cfg.updates;) {
    if (kind == 'S' && cfg.space.edge_count() == 0) {
      kind = 'O';
      continue;
    }
    const int len = std::min(cfg.block, cfg.updates - s);
    const auto spec = kind == 'O' ? open.with_frozen(inc.arch.skips) : open;
    SamplingPlan plan{kind == 'O' ? SamplingMode::FixedSkip : SamplingMode::Joint, {}};
    if (kind == 'S') plan.forcing.ops = inc.arch.ops;
    Incumbent phase_best;
    for (int q = 0; q < len; ++q) {
      auto b = engine.step(s + q, spec, plan, kind);
      if (b.reward > phase_best.reward) phase_best = std::move(b);
    }
    if (phase_best.reward > inc.reward) inc = phase_best;
    phases.push_back({kind, s, s + len - 1, inc.arch, inc.reward});
    s += len;
    kind = kind == 'O' ? 'S' : 'O';
  }

  // Greedy operators under the incumbent skips, then greedy skips given those operators.
  const auto op_spec = open.with_frozen(inc.arch.skips);
  const SamplingPlan op_plan{SamplingMode::FixedSkip, {}};
  auto derived = greedy_rollout(engine.params(), op_spec, op_plan).arch;
  if (cfg.space.edge_count() > 0) {
    SamplingPlan skip_plan{SamplingMode::Joint, {}};
    skip_plan.forcing.ops = derived.ops;
    derived = greedy_rollout(engine.params(), open, skip_plan).arch;
  }
  auto result = engine.finish(SearchMode::Alternating, std::move(derived), op_spec, op_plan);
  result.phases = std::move(phases);
  return result;
}

}  // namespace

SearchResult nar_search(const SearchConfig& config, int workers) {
  if (config.mode != SearchMode::NarFixedSkip) throw ConfigError("nar_search needs mode nar_fixed_skip");
  return run_search(config, workers);
}

SearchResult alternating_search(const SearchConfig& config, int workers) {
  if (config.mode != SearchMode::Alternating) throw ConfigError("alternating_search needs mode alternating");
  return run_search(config, workers);
}

SearchResult joint_search(const SearchConfig& config, int workers) {
  if (config.mode != SearchMode::Joint) throw ConfigError("joint_search needs mode joint");
  return run_search(config, workers);
}

SearchResult run_search(const SearchConfig& config, int workers) {
  const auto oracle = make_oracle(config.oracle, config.space);
  return run_search(config, *oracle, workers);
}

SearchResult run_search(const SearchConfig& config, RewardOracle& oracle, int workers) {
  switch (config.mode) {
    case SearchMode::NarFixedSkip: return nar_impl(config, oracle, workers);
    case SearchMode::Alternating: return alternating_impl(config, oracle, workers);
    case SearchMode::Joint: return joint_impl(config, oracle, workers);
  }
  throw ConfigError("unknown search mode");
}

nlohmann::json to_json(const SearchResult& r) {
  auto arch_json = [](const ArchitectureVector& a) {
    return nlohmann::json{{"ops", serialize_arch_vector(a)}, {"skips", skips_to_hex(a.skips)}};
  };
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : r.history)
    history.push_back({{"step", h.step},
                       {"phase", std::string(1, h.phase)},
                       {"mean_reward", h.mean_reward},
                       {"best_so_far", h.best_so_far},
                       {"op_grad_norm", h.op_grad_norm},
                       {"skip_grad_norm", h.skip_grad_norm}});
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : r.phases)
    phases.push_back({{"kind", std::string(1, p.kind)},
                      {"first_step", p.first_step},
                      {"last_step", p.last_step},
                      {"incumbent", arch_json(p.incumbent)},
                      {"incumbent_reward", p.incumbent_reward}});
  return {{"mode", to_string(r.mode)},
          {"best_arch", arch_json(r.best_arch)},
          {"best_reward", r.best_reward},
          {"derived_arch", arch_json(r.derived_arch)},
          {"final_op_entropy", r.final_op_entropy},
          {"pretrain_losses", r.pretrain_losses},
          {"phases", phases},
          {"history", history}};
}

namespace {

// Best operator assignment with skips fixed. Returns true on strict improvement.
bool improve_ops(RewardOracle& oracle, const SearchSpaceSpec& open, Incumbent& inc, bool& enumerated) {
  const auto spec = open.with_frozen(inc.arch.skips);
  if (cardinality(spec).total() <= BigInt(kBlockEnumerationLimit)) {
    enumerated = true;
    const auto best = enumerate_optimum(oracle, spec, false, 1, kBlockEnumerationLimit);
    if (best.best_reward > inc.reward) {
      inc = {best.best_arch, best.best_reward};
      return true;
    }
    return false;
  }
  enumerated = false;
  bool improved = false;
  for (bool changed = true; changed;) {
    changed = false;
    for (int j = 0; j < open.n_nodes(); ++j)
      for (int k = 0; k < open.num_ops(); ++k) {
        auto cand = inc.arch;
        cand.ops[static_cast<std::size_t>(j)] = k;
        const double r = oracle.evaluate(cand, 0);
        if (r > inc.reward) {
          inc = {std::move(cand), r};
          changed = improved = true;
        }
      }
  }
  return improved;
}

bool improve_skips(RewardOracle& oracle, const SearchSpaceSpec& open, Incumbent& inc, bool& enumerated) {
  const int E = open.edge_count();
  if (E == 0) return false;
  if (E <= 20) {
    enumerated = true;
    Incumbent best;
    auto cand = inc.arch;
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << E); ++m) {
      // First edge is the most significant digit, matching canonical order.
      for (int e = 0; e < E; ++e) cand.skips[static_cast<std::size_t>(e)] = static_cast<std::uint8_t>((m >> (E - 1 - e)) & 1);
      const double r = oracle.evaluate(cand, 0);
      if (r > best.reward) best = {cand, r};
    }
    if (best.reward > inc.reward) {
      inc = std::move(best);
      return true;
    }
    return false;
  }
  enumerated = false;
  bool improved = false;
  for (bool changed = true; changed;) {
    changed = false;
    for (int e = 0; e < E; ++e) {
      auto cand = inc.arch;
      cand.skips[static_cast<std::size_t>(e)] ^= 1;
      const double r = oracle.evaluate(cand, 0);
      if (r > inc.reward) {
        inc = {std::move(cand), r};
        changed = improved = true;
      }
    }
  }
  return improved;
}

}  // namespace

AscentTrace exact_alternating_ascent(RewardOracle& oracle, const SearchSpaceSpec& space,
                                     const ArchitectureVector& init) {
  if (!oracle.pure()) throw std::invalid_argument("exact ascent needs a pure oracle");
  const auto open = space.with_frozen(std::nullopt);
  require_valid(init, open);
  AscentTrace trace;
  Incumbent inc{init, oracle.evaluate(init, 0)};
  trace.steps.push_back({'I', inc.arch, inc.reward});
  for (;;) {
    bool any = false;
    ++trace.phases_run;
    if (improve_ops(oracle, open, inc, trace.operator_block_enumerated)) {
      trace.steps.push_back({'O', inc.arch, inc.reward});
      any = true;
    }
    if (open.edge_count() > 0) {
      ++trace.phases_run;
      if (improve_skips(oracle, open, inc, trace.skip_block_enumerated)) {
        trace.steps.push_back({'S', inc.arch, inc.reward});
        any = true;
      }
    }
    if (!any) break;
  }
  return trace;
}

AscentTrace exact_alternating_ascent(const TabularOracleSpec& spec, const SearchSpaceSpec& space,
                                     const ArchitectureVector& init) {
  TabularOracle oracle(spec);
  return exact_alternating_ascent(oracle, space, init);
}

void write_trace_csv(const std::vector<AscentTrace>& traces, const std::filesystem::path& path, bool instance) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::fprintf(f, instance ? "instance,phase,arch,reward\n" : "phase,arch,reward\n");
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (const auto& s : traces[i].steps) {
      if (instance) std::fprintf(f, "%zu,", i);
      std::fprintf(f, "%c,\"%s\",%.17g\n", s.phase, arch_key(s.arch).c_str(), s.reward);
    }
  std::fclose(f);
}

}  // namespace nar
