// nar: command-line front end for searches, enumeration, reward analysis,
// demos and gradient checks.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nar/experiments.hpp"
#include "nar/nar.hpp"
#include "nar/reward.hpp"

#ifndef NAR_VERSION
#define NAR_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2, kGuardError = 3, kOracleError = 4 };

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Loads a config file. A manifest written by an earlier run is accepted too;
// its config snapshot is used.
json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw nar::ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw nar::ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw nar::ConfigError("config: expected a JSON object");
  if (j.contains("manifest_version")) {
    if (!j.contains("config")) throw nar::ConfigError("manifest has no config snapshot");
    return j.at("config");
  }
  return j;
}

struct Run {
  std::string command;
  json config;
  int workers = 0;
  fs::path out;
  json manifest;
  std::vector<std::string> outputs;

  void start() {
    fs::create_directories(out);
    manifest = {{"manifest_version", 1},
                {"tool", "nar"},
                {"version", NAR_VERSION},
                {"command", command},
                {"config", config},
                {"seed", config.value("seed", std::uint64_t{0})},
                {"workers", workers},
                {"started_at", utc_now()},
                {"finished_at", nullptr},
                {"status", "running"},
                {"outputs", json::array()}};
    write_json(out / "manifest.json", manifest);
  }

  fs::path output(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }

  void finish(int code, const std::string& message) {
    if (manifest.is_null()) start();
    manifest["finished_at"] = utc_now();
    manifest["status"] = code == kOk ? "ok" : code == kCheckFailed ? "check_failed" : "error";
    manifest["exit_code"] = code;
    if (!message.empty()) manifest["message"] = message;
    manifest["outputs"] = outputs;
    write_json(out / "manifest.json", manifest);
  }
};

nar::SearchSpaceSpec parse_space(const json& cfg) {
  if (!cfg.contains("space")) throw nar::ConfigError("space: missing");
  try {
    return nar::space_from_json(cfg.at("space"));
  } catch (const std::exception& e) {
    throw nar::ConfigError(std::string("space: ") + e.what());
  }
}

int cmd_search(Run& run) {
  const auto cfg = nar::search_config_from_json(run.config);
  run.start();
  const auto result = nar::run_search(cfg, run.workers);
  auto j = nar::to_json(result);
  nar::save_checkpoint(*result.params, run.output("controller.ckpt"));
  j["checkpoint"] = "controller.ckpt";
  write_json(run.output("result.json"), j);
  nar::write_gradlog_csv(result.grad_log, run.output("gradlog.csv"));
  std::printf("best %s reward %.6f\n", nar::arch_key(result.best_arch).c_str(), result.best_reward);
  return kOk;
}

int cmd_enumerate(Run& run) {
  const auto space = parse_space(run.config);
  const auto opts = run.config.value("enumerate", json::object());
  const bool ranking = opts.value("ranking", false);
  const auto limit = opts.value("limit", nar::kEnumerationLimit);
  const auto oracle = nar::make_oracle(run.config.value("oracle", json{{"kind", "tabular"}}), space);
  if (!oracle->pure()) throw nar::ConfigError("oracle: enumeration needs a pure oracle (tabular or proxy)");
  const auto card = nar::cardinality(space);
  run.start();
  const auto res = nar::enumerate_optimum(*oracle, space, ranking, run.workers, limit);
  json j = {{"count", res.count},
            {"operator_count", card.operator_count.str()},
            {"skip_count", card.skip_count.str()},
            {"best_arch", {{"ops", nar::serialize_arch_vector(res.best_arch)}, {"skips", nar::skips_to_hex(res.best_arch.skips)}}},
            {"best_reward", res.best_reward}};
  if (ranking) {
    const nar::ArchEnumerator en(space, limit);
    std::FILE* f = std::fopen(run.output("ranking.csv").c_str(), "w");
    if (!f) throw std::runtime_error("cannot write ranking.csv");
    std::fprintf(f, "rank,arch,reward\n");
    for (std::size_t r = 0; r < res.ranking.size(); ++r)
      std::fprintf(f, "%zu,\"%s\",%.17g\n", r + 1, nar::arch_key(en.decode(res.ranking[r].index)).c_str(),
                   res.ranking[r].reward);
    std::fclose(f);
    j["ranking"] = "ranking.csv";
  }
  write_json(run.output("result.json"), j);
  std::printf("optimum %s reward %.6f over %llu architectures\n", nar::arch_key(res.best_arch).c_str(),
              res.best_reward, static_cast<unsigned long long>(res.count));
  return kOk;
}

int cmd_analyze(Run& run) {
  const auto space = parse_space(run.config);
  const auto opts = run.config.value("analyze", json::object());
  const int n = opts.value("batch_size", 16);
  const int batches = opts.value("batches", 50);
  const auto sampling = opts.value("sampling", std::string("joint"));
  const auto init = opts.value("params", std::string("init"));
  const int hidden = run.config.value("controller", json::object()).value("hidden", 64);
  const auto seed = run.config.value("seed", std::uint64_t{0});
  if (n < 1) throw nar::ConfigError("analyze.batch_size: must be >= 1");
  if (batches < 2) throw nar::ConfigError("analyze.batches: must be >= 2");
  if (sampling != "joint" && sampling != "fixed_skip") throw nar::ConfigError("analyze.sampling: expected joint or fixed_skip");
  if (init != "init" && init != "zero") throw nar::ConfigError("analyze.params: expected init or zero");
  const auto mode = sampling == "joint" ? nar::SamplingMode::Joint : nar::SamplingMode::FixedSkip;
  const auto sample_space = mode == nar::SamplingMode::Joint
                                ? space.with_frozen(std::nullopt)
                                : space.with_frozen(space.frozen_skips().value_or(nar::residual_skips(space.topology())));
  const auto oracle = nar::make_oracle(run.config.value("oracle", json{{"kind", "tabular"}}), space);
  run.start();

  const nar::ControllerConfig cc{hidden, space.num_ops(), space.n_nodes(), mode, 1.0, 0.0};
  const auto params = init == "zero" ? nar::zero_controller(cc) : nar::init_controller(cc, nar::derive_seed(seed, {0x6374726cULL}));
  const auto tables =
      nar::repeated_assignments(params, sample_space, {mode, {}}, *oracle, n, batches, seed, run.workers);
  const auto stats = nar::assignment_noise_stats(tables, sample_space);
  json tj = json::array();
  for (const auto& t : tables) tj.push_back(nar::to_json(t));
  json j = {{"batch_size", n}, {"batches", batches}, {"sampling", sampling}, {"noise", nar::to_json(stats)}, {"tables", tj}};
  write_json(run.output("result.json"), j);
  nar::write_noise_csv(stats, run.output("noise.csv"));
  std::printf("mean variance: operators %.6g skips %.6g\n", stats.mean_op_variance, stats.mean_skip_variance);
  return kOk;
}

void write_series_csv(const nar::GradNoiseReport& rep, const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::fprintf(f, "seed,step,op_grad_norm,skip_grad_norm\n");
  for (const auto& r : rep.runs)
    for (const auto& rec : r.log.records)
      std::fprintf(f, "%llu,%d,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed), rec.step, rec.op_grad_norm,
                   rec.skip_grad_norm);
  std::fclose(f);
}

int cmd_demo(Run& run, std::string which) {
  const auto opts = run.config.value("demo", json::object());
  if (which.empty()) which = opts.value("which", std::string());
  if (which.empty()) throw nar::ConfigError("demo: name one of fig1, bias, eq11, pretrain");
  const int seeds = opts.value("seeds", 10);
  if (seeds < 1) throw nar::ConfigError("demo.seeds: must be >= 1");
  run.command = "demo " + which;

  if (which == "eq11") {
    const auto space = parse_space(run.config);
    const auto oracle = run.config.value("oracle", json{{"kind", "tabular"}});
    if (oracle.value("kind", std::string("tabular")) != "tabular") throw nar::ConfigError("oracle: eq11 needs tabular");
    nar::TabularGenParams gen;
    gen.utility_scale = oracle.value("utility_scale", gen.utility_scale);
    gen.edge_scale = oracle.value("edge_scale", gen.edge_scale);
    gen.interactions = oracle.value("interactions", gen.interactions);
    gen.interaction_scale = oracle.value("interaction_scale", gen.interaction_scale);
    const int instances = opts.value("instances", 100);
    const int max_phases = opts.value("max_phases", 50);
    run.start();
    const auto rep = nar::ascent_demo(space, gen, instances, max_phases, oracle.value("seed", std::uint64_t{0}));
    write_json(run.output("result.json"), nar::to_json(rep));
    nar::write_trace_csv(rep.traces, run.output("trace.csv"), true);
    std::printf("%s\n", nar::to_json(rep)["verdict"].get<std::string>().c_str());
    return kOk;
  }

  const auto cfg = nar::search_config_from_json(run.config);
  if (which == "fig1") {
    run.start();
    const auto rep = nar::grad_noise_demo(cfg, seeds, run.workers);
    write_json(run.output("result.json"), nar::to_json(rep));
    write_series_csv(rep, run.output("gradlog.csv"));
    std::printf("%s\n", nar::to_json(rep)["verdict"].get<std::string>().c_str());
    return kOk;
  }
  if (which == "bias") {
    run.start();
    const auto rep = nar::bias_demo(cfg, seeds, run.workers);
    write_json(run.output("result.json"), nar::to_json(rep));
    std::printf("%s\n", nar::to_json(rep)["verdict"].get<std::string>().c_str());
    return kOk;
  }
  if (which == "pretrain") {
    run.start();
    const auto rep = nar::pretrain_demo(cfg, opts.value("epochs", 5), seeds, run.workers);
    write_json(run.output("result.json"), nar::to_json(rep));
    std::printf("%s\n", nar::to_json(rep)["verdict"].get<std::string>().c_str());
    return kOk;
  }
  throw nar::ConfigError("demo: unknown demo \"" + which + "\"");
}

int cmd_gradcheck(Run& run) {
  const auto space = parse_space(run.config);
  auto settings = nar::gradcheck_from_json(run.config.value("gradcheck", json()));
  if (!run.config.value("gradcheck", json::object()).contains("seed")) settings.seed = run.config.value("seed", std::uint64_t{0});
  run.start();
  const auto reports = nar::run_gradcheck(space, settings, run.workers);
  bool pass = true;
  json modes = json::array();
  for (const auto& r : reports) {
    pass = pass && r.pass;
    modes.push_back(nar::to_json(r));
    std::printf("%-10s max rel error %.3e (%s)\n", nar::to_string(r.mode), r.max_rel_error, r.pass ? "pass" : "fail");
  }
  write_json(run.output("result.json"),
             {{"h", settings.h},
              {"tolerance", settings.tolerance},
              {"arithmetic", settings.arithmetic == nar::FdArithmetic::Quad ? "quad" : "double"},
              {"modes", modes},
              {"pass", pass}});
  return pass ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural architecture search and refinement toolkit"};
  app.require_subcommand(1);
  std::string config_path, out_dir, demo_name;
  int workers = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config JSON (or a manifest.json from an earlier run)")->required();
    sub->add_option("--workers", workers, "Worker threads, 0 = all logical cores")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", out_dir, "Output directory (default: $NAR_OUT_DIR, else ./nar_out)");
  };
  auto* search = app.add_subcommand("search", "Run a search (mode from the config)");
  auto* enumerate = app.add_subcommand("enumerate", "Exhaustively rank a pure oracle");
  auto* analyze = app.add_subcommand("analyze-rewards", "Reward assignment tables and their noise");
  auto* demo = app.add_subcommand("demo", "fig1 | bias | eq11 | pretrain");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the controller gradient");
  for (auto* s : {search, enumerate, analyze, demo, gradcheck}) add_common(s);
  demo->add_option("which", demo_name, "Demo name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  Run run;
  run.workers = workers;
  if (!out_dir.empty())
    run.out = out_dir;
  else if (const char* env = std::getenv("NAR_OUT_DIR"); env && *env)
    run.out = env;
  else
    run.out = "nar_out";

  int code = kOk;
  std::string message;
  try {
    run.config = load_config(config_path);
    auto* sub = app.get_subcommands().front();
    run.command = sub->get_name();
    if (sub == search) code = cmd_search(run);
    else if (sub == enumerate) code = cmd_enumerate(run);
    else if (sub == analyze) code = cmd_analyze(run);
    else if (sub == demo) code = cmd_demo(run, demo_name);
    else code = cmd_gradcheck(run);
  } catch (const nar::ConfigError& e) {
    code = kConfigError;
    message = e.what();
  } catch (const nar::GuardError& e) {
    code = kGuardError;
    message = e.what();
  } catch (const nar::OracleError& e) {
    code = kOracleError;
    message = e.what();
  } catch (const std::invalid_argument& e) {
    code = kConfigError;
    message = e.what();
  } catch (const std::exception& e) {
    code = kCheckFailed;
    message = e.what();
  }
  if (!message.empty()) std::fprintf(stderr, "nar: %s\n", message.c_str());
  try {
    run.finish(code, message);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "nar: %s\n", e.what());
  }
  return code;
}
