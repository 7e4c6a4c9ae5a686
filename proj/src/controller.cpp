#include "nar/controller.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>
#include <omp.h>

#include "nar/parallel.hpp"
#include "reference_forward.hpp"

namespace nar {

const char* to_string(SamplingMode mode) { return mode == SamplingMode::Joint ? "joint" : "fixed_skip"; }

ParamLayout ParamLayout::make(int hidden, int num_ops) {
  if (hidden < 1) throw std::invalid_argument("controller hidden size must be >= 1");
  if (num_ops < 2) throw std::invalid_argument("controller needs at least 2 operators");
  ParamLayout l;
  l.hidden = hidden;
  l.num_ops = num_ops;
  const auto H = static_cast<std::size_t>(hidden);
  const auto K = static_cast<std::size_t>(num_ops);
  std::size_t off = 0;
  l.embed = off;
  off += (K + 3) * H;
  l.lstm_w = off;
  off += 4 * H * 2 * H;
  l.lstm_b = off;
  off += 4 * H;
  l.op_w = off;
  off += K * H;
  l.op_b = off;
  off += K;
  l.skip_w = off;
  off += 2 * H;
  l.skip_b = off;
  off += 2;
  l.size = off;
  return l;
}

std::size_t parameter_count(int hidden, int num_ops) { return ParamLayout::make(hidden, num_ops).size; }

ControllerParams::ControllerParams(ControllerConfig config, std::uint64_t seed, std::vector<double> values)
    : config_(config), seed_(seed), layout_(ParamLayout::make(config.hidden, config.num_ops)),
      values_(std::move(values)) {
  if (values_.size() != layout_.size)
    throw std::invalid_argument("controller parameter vector has " + std::to_string(values_.size()) +
                                " entries, expected " + std::to_string(layout_.size));
  if (config_.temperature <= 0.0) throw std::invalid_argument("controller temperature must be > 0");
  if (config_.tanh_constant < 0.0) throw std::invalid_argument("controller tanh_constant must be >= 0");
}

ControllerParams init_controller(const ControllerConfig& config, std::uint64_t seed) {
  const auto P = parameter_count(config.hidden, config.num_ops);
  Rng rng(derive_seed(seed, {0x636f6e74ULL}));
  std::vector<double> values(P);
  for (auto& v : values) v = rng.uniform(-0.1, 0.1);
  return ControllerParams(config, seed, std::move(values));
}

ControllerParams zero_controller(const ControllerConfig& config) {
  return ControllerParams(config, 0, std::vector<double>(parameter_count(config.hidden, config.num_ops), 0.0));
}

double DecisionTrace::total_log_prob() const {
  double total = 0.0;
  for (const auto& d : decisions)
    if (!d.forced) total += d.log_prob;
  return total;
}

namespace {

struct Slot {
  DecisionKind kind;
  int node;
  int edge;
  int forced_value;  // -1 if free
};

std::vector<Slot> plan_slots(const SearchSpaceSpec& spec, const SamplingPlan& plan) {
  const auto& topo = spec.topology();
  if (plan.mode == SamplingMode::FixedSkip && !spec.fixed_skip())
    throw std::invalid_argument("fixed_skip sampling requires a frozen skip mask");
  if (plan.forcing.ops) {
    if (static_cast<int>(plan.forcing.ops->size()) != spec.n_nodes())
      throw std::invalid_argument("forced ops length != n_nodes");
    for (int k : *plan.forcing.ops)
      if (k < 0 || k >= spec.num_ops()) throw std::invalid_argument("forced op index out of range");
  }
  if (plan.forcing.skips && static_cast<int>(plan.forcing.skips->size()) != spec.edge_count())
    throw std::invalid_argument("forced skips length != candidate edge count");

  std::vector<Slot> slots;
  for (int j = 1; j <= spec.n_nodes(); ++j) {
    slots.push_back({DecisionKind::Operator, j, -1, plan.forcing.ops ? (*plan.forcing.ops)[j - 1] : -1});
    if (plan.mode == SamplingMode::FixedSkip) continue;
    const int first = topo.first_edge_of(j);
    for (int e = first; e < first + topo.edges_into(j); ++e)
      slots.push_back({DecisionKind::Skip, j, e, plan.forcing.skips ? (*plan.forcing.skips)[e] : -1});
  }
  return slots;
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

void lstm_step(const ControllerParams& p, int token, Rollout::Step& s) {
  const int H = p.layout().hidden;
  Eigen::VectorXd xh(2 * H);
  xh << p.embedding().row(token).transpose(), s.h_prev;
  const Eigen::VectorXd z = p.lstm_weights() * xh + p.lstm_bias();
  s.input_token = token;
  s.i = sigmoid(z.segment(0, H));
  s.f = sigmoid(z.segment(H, H));
  s.g = z.segment(2 * H, H).array().tanh().matrix();
  s.o = sigmoid(z.segment(3 * H, H));
  s.c = s.f.cwiseProduct(s.c_prev) + s.i.cwiseProduct(s.g);
  s.tanh_c = s.c.array().tanh().matrix();
  s.h = s.o.cwiseProduct(s.tanh_c);
}

Eigen::VectorXd transform_logits(const ControllerConfig& cfg, const Eigen::VectorXd& u) {
  Eigen::VectorXd scaled = u / cfg.temperature;
  if (cfg.tanh_constant > 0.0) return cfg.tanh_constant * scaled.array().tanh().matrix();
  return scaled;
}

// d logits / d pre-logits, elementwise.
Eigen::VectorXd transform_slope(const ControllerConfig& cfg, const Eigen::VectorXd& u) {
  if (cfg.tanh_constant > 0.0) {
    const Eigen::ArrayXd t = (u / cfg.temperature).array().tanh();
    return (cfg.tanh_constant * (1.0 - t.square()) / cfg.temperature).matrix();
  }
  return Eigen::VectorXd::Constant(u.size(), 1.0 / cfg.temperature);
}

// Returns log-softmax.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& l) {
  const double m = l.maxCoeff();
  const double lse = m + std::log((l.array() - m).exp().sum());
  return (l.array() - lse).matrix();
}

template <class Choose>
Rollout run_controller(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                       Choose&& choose) {
  if (params.config().num_ops != spec.num_ops())
    throw std::invalid_argument("controller operator count does not match search space");
  const auto slots = plan_slots(spec, plan);
  const int H = params.layout().hidden;
  const auto& layout = params.layout();

  Rollout r;
  r.steps.resize(slots.size());
  r.trace.decisions.reserve(slots.size());
  r.arch.ops.assign(static_cast<std::size_t>(spec.n_nodes()), 0);
  if (plan.mode == SamplingMode::FixedSkip)
    r.arch.skips = *spec.frozen_skips();
  else
    r.arch.skips.assign(static_cast<std::size_t>(spec.edge_count()), 0);

  int token = layout.start_token();
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H), c = Eigen::VectorXd::Zero(H);
  for (std::size_t d = 0; d < slots.size(); ++d) {
    const auto& slot = slots[d];
    auto& s = r.steps[d];
    s.h_prev = h;
    s.c_prev = c;
    lstm_step(params, token, s);
    h = s.h;
    c = s.c;

    const bool is_op = slot.kind == DecisionKind::Operator;
    s.pre_logits = is_op ? Eigen::VectorXd(params.op_weights() * s.h + params.op_bias())
                         : Eigen::VectorXd(params.skip_weights() * s.h + params.skip_bias());
    s.logits = transform_logits(params.config(), s.pre_logits);
    const Eigen::VectorXd logp = log_softmax(s.logits);

    Decision dec;
    dec.kind = slot.kind;
    dec.node = slot.node;
    dec.edge = slot.edge;
    dec.probs.resize(static_cast<std::size_t>(logp.size()));
    for (Eigen::Index k = 0; k < logp.size(); ++k) dec.probs[static_cast<std::size_t>(k)] = std::exp(logp[k]);
    dec.forced = slot.forced_value >= 0;
    dec.choice = choose(slot, dec.probs);
    dec.log_prob = logp[dec.choice];

    if (is_op) {
      r.arch.ops[static_cast<std::size_t>(slot.node - 1)] = dec.choice;
      token = layout.op_token(dec.choice);
    } else {
      r.arch.skips[static_cast<std::size_t>(slot.edge)] = static_cast<std::uint8_t>(dec.choice);
      token = layout.skip_token(dec.choice);
    }
    r.trace.decisions.push_back(std::move(dec));
  }
  return r;
}

int draw_categorical(const std::vector<double>& probs, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

Rollout sample_rollout(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                       Rng& rng) {
  return run_controller(params, spec, plan, [&](const Slot& slot, const std::vector<double>& probs) {
    // Draw even for forced slots so the stream position does not depend on forcing.
    const double u = rng.uniform();
    return slot.forced_value >= 0 ? slot.forced_value : draw_categorical(probs, u);
  });
}

Rollout replay_rollout(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan,
                       const ArchitectureVector& arch) {
  require_valid(arch, plan.mode == SamplingMode::FixedSkip ? spec : spec.with_frozen(std::nullopt));
  return run_controller(params, spec, plan, [&](const Slot& slot, const std::vector<double>&) {
    const int value = slot.kind == DecisionKind::Operator ? arch.ops[static_cast<std::size_t>(slot.node - 1)]
                                                          : arch.skips[static_cast<std::size_t>(slot.edge)];
    if (slot.forced_value >= 0 && value != slot.forced_value)
      throw std::invalid_argument("architecture disagrees with forced decision at node " +
                                  std::to_string(slot.node));
    return value;
  });
}

Rollout greedy_rollout(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan) {
  return run_controller(params, spec, plan, [&](const Slot& slot, const std::vector<double>& probs) {
    if (slot.forced_value >= 0) return slot.forced_value;
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
      if (probs[k] > probs[best]) best = k;
    return static_cast<int>(best);
  });
}

std::pair<ArchitectureVector, DecisionTrace> sample(const ControllerParams& params, const SearchSpaceSpec& spec,
                                                    SamplingMode mode, Rng& rng) {
  auto r = sample_rollout(params, spec, SamplingPlan{mode, {}}, rng);
  return {std::move(r.arch), std::move(r.trace)};
}

LogProb log_prob(const ControllerParams& params, const ArchitectureVector& arch, const SearchSpaceSpec& spec,
                 const SamplingPlan& plan) {
  auto r = replay_rollout(params, spec, plan, arch);
  LogProb out;
  out.total = r.trace.total_log_prob();
  out.trace = std::move(r.trace);
  return out;
}

std::vector<double> backward(const ControllerParams& params, const Rollout& rollout,
                             std::span<const Eigen::VectorXd> seeds) {
  if (seeds.size() != rollout.steps.size()) throw std::invalid_argument("backward: one seed per decision required");
  const auto& layout = params.layout();
  const int H = layout.hidden;
  std::vector<double> grad(params.size(), 0.0);
  auto gmat = [&](std::size_t off, int r, int c) { return Eigen::Map<RowMatrix>(grad.data() + off, r, c); };
  auto gvec = [&](std::size_t off, int n) { return Eigen::Map<Eigen::VectorXd>(grad.data() + off, n); };
  auto g_embed = gmat(layout.embed, layout.token_count(), H);
  auto g_w = gmat(layout.lstm_w, 4 * H, 2 * H);
  auto g_b = gvec(layout.lstm_b, 4 * H);
  auto g_opw = gmat(layout.op_w, layout.num_ops, H);
  auto g_opb = gvec(layout.op_b, layout.num_ops);
  auto g_skw = gmat(layout.skip_w, 2, H);
  auto g_skb = gvec(layout.skip_b, 2);

  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H), dc_next = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd dz(4 * H), xh(2 * H);
  for (std::size_t d = rollout.steps.size(); d-- > 0;) {
    const auto& s = rollout.steps[d];
    const auto& dec = rollout.trace.decisions[d];
    Eigen::VectorXd dh = dh_next;
    if (!dec.forced) {
      if (seeds[d].size() != s.logits.size()) throw std::invalid_argument("backward: seed size mismatch");
      const Eigen::VectorXd du = seeds[d].cwiseProduct(transform_slope(params.config(), s.pre_logits));
      if (dec.kind == DecisionKind::Operator) {
        g_opw.noalias() += du * s.h.transpose();
        g_opb += du;
        dh.noalias() += params.op_weights().transpose() * du;
      } else {
        g_skw.noalias() += du * s.h.transpose();
        g_skb += du;
        dh.noalias() += params.skip_weights().transpose() * du;
      }
    }
    const Eigen::ArrayXd one = Eigen::ArrayXd::Ones(H);
    const Eigen::ArrayXd dc = dc_next.array() + dh.array() * s.o.array() * (one - s.tanh_c.array().square());
    const Eigen::ArrayXd d_o = dh.array() * s.tanh_c.array();
    const Eigen::ArrayXd d_i = dc * s.g.array();
    const Eigen::ArrayXd d_g = dc * s.i.array();
    const Eigen::ArrayXd d_f = dc * s.c_prev.array();
    dz.segment(0, H) = (d_i * s.i.array() * (one - s.i.array())).matrix();
    dz.segment(H, H) = (d_f * s.f.array() * (one - s.f.array())).matrix();
    dz.segment(2 * H, H) = (d_g * (one - s.g.array().square())).matrix();
    dz.segment(3 * H, H) = (d_o * s.o.array() * (one - s.o.array())).matrix();

    xh << params.embedding().row(s.input_token).transpose(), s.h_prev;
    g_w.noalias() += dz * xh.transpose();
    g_b += dz;
    const Eigen::VectorXd dxh = params.lstm_weights().transpose() * dz;
    g_embed.row(s.input_token) += dxh.head(H).transpose();
    dh_next = dxh.tail(H);
    dc_next = (dc * s.f.array()).matrix();
  }
  return grad;
}

std::vector<Eigen::VectorXd> log_prob_seeds(const Rollout& rollout) {
  std::vector<Eigen::VectorXd> seeds;
  seeds.reserve(rollout.trace.decisions.size());
  for (const auto& dec : rollout.trace.decisions) {
    Eigen::VectorXd s = -Eigen::Map<const Eigen::VectorXd>(dec.probs.data(), static_cast<Eigen::Index>(dec.probs.size()));
    s[dec.choice] += 1.0;
    seeds.push_back(std::move(s));
  }
  return seeds;
}

std::vector<double> grad_log_prob(const ControllerParams& params, const ArchitectureVector& arch,
                                  const SearchSpaceSpec& spec, const SamplingPlan& plan) {
  const auto r = replay_rollout(params, spec, plan, arch);
  const auto seeds = log_prob_seeds(r);
  return backward(params, r, seeds);
}

std::vector<double> grad_entropy(const ControllerParams& params, const Rollout& rollout) {
  std::vector<Eigen::VectorXd> seeds;
  seeds.reserve(rollout.trace.decisions.size());
  for (const auto& dec : rollout.trace.decisions) {
    const auto n = static_cast<Eigen::Index>(dec.probs.size());
    const Eigen::Map<const Eigen::ArrayXd> p(dec.probs.data(), n);
    const Eigen::ArrayXd logp = p.log();
    const double entropy = -(p * logp).sum();
    // dH/dl_m = -p_m (log p_m + H)
    seeds.push_back((-p * (logp + entropy)).matrix());
  }
  return backward(params, rollout, seeds);
}

FiniteDiffReport finite_diff_check(const ControllerParams& params, const ArchitectureVector& arch,
                                   const SearchSpaceSpec& spec, const SamplingPlan& plan, double h,
                                   FdArithmetic arithmetic, int workers) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  const auto rollout = replay_rollout(params, spec, plan, arch);
  const auto analytic = backward(params, rollout, log_prob_seeds(rollout));
  const auto steps = detail::replay_steps(rollout.trace);
  const auto P = static_cast<std::int64_t>(params.size());
  std::vector<double> numeric(params.size());
  IndexedErrors errors(params.size());

#pragma omp parallel num_threads(resolve_workers(workers))
  {
    ControllerParams local = params;
    std::vector<detail::Quad> qv(params.values().begin(), params.values().end());
#pragma omp for schedule(dynamic, 16)
    for (std::int64_t c = 0; c < P; ++c) {
      const auto idx = static_cast<std::size_t>(c);
      try {
        if (arithmetic == FdArithmetic::Quad) {
          const detail::Quad orig = qv[idx];
          qv[idx] = orig + detail::Quad(h);
          const auto up = detail::reference_log_prob<detail::Quad>(qv, params.layout(), params.config(), steps);
          qv[idx] = orig - detail::Quad(h);
          const auto down = detail::reference_log_prob<detail::Quad>(qv, params.layout(), params.config(), steps);
          qv[idx] = orig;
          numeric[idx] = static_cast<double>((up - down) / detail::Quad(2.0 * h));
        } else {
          auto& v = local.values()[idx];
          const double orig = v;
          v = orig + h;
          const double up = replay_rollout(local, spec, plan, arch).trace.total_log_prob();
          v = orig - h;
          const double down = replay_rollout(local, spec, plan, arch).trace.total_log_prob();
          v = orig;
          numeric[idx] = (up - down) / (2.0 * h);
        }
      } catch (...) {
        errors.capture(idx);
      }
    }
  }
  errors.rethrow_first();

  FiniteDiffReport report;
  for (std::size_t c = 0; c < params.size(); ++c) {
    const double a = analytic[c], n = numeric[c];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
    if (err > report.max_rel_error || c == 0) {
      report.max_rel_error = err;
      report.worst_index = c;
      report.analytic = a;
      report.numeric = n;
    }
  }
  return report;
}

double mean_operator_entropy(const ControllerParams& params, const SearchSpaceSpec& spec, const SamplingPlan& plan) {
  const auto r = greedy_rollout(params, spec, plan);
  double sum = 0.0;
  int count = 0;
  for (const auto& dec : r.trace.decisions) {
    if (dec.forced || dec.kind != DecisionKind::Operator) continue;
    double e = 0.0;
    for (double p : dec.probs)
      if (p > 0.0) e -= p * std::log(p);
    sum += e;
    ++count;
  }
  return count ? sum / count : 0.0;
}

namespace {

nlohmann::json config_to_json(const ControllerConfig& c) {
  return {{"hidden", c.hidden},
          {"num_ops", c.num_ops},
          {"n_nodes", c.n_nodes},
          {"mode", to_string(c.mode)},
          {"temperature", c.temperature},
          {"tanh_constant", c.tanh_constant}};
}

ControllerConfig config_from_json(const nlohmann::json& j) {
  ControllerConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.num_ops = j.at("num_ops").get<int>();
  c.n_nodes = j.at("n_nodes").get<int>();
  c.mode = j.at("mode").get<std::string>() == "fixed_skip" ? SamplingMode::FixedSkip : SamplingMode::Joint;
  c.temperature = j.at("temperature").get<double>();
  c.tanh_constant = j.at("tanh_constant").get<double>();
  return c;
}

constexpr char kMagic[] = "NARCKPT1\n";

}  // namespace

void save_checkpoint(const ControllerParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  nlohmann::json header = {
      {"config", config_to_json(params.config())}, {"seed", params.seed()}, {"P", params.size()}};
  out.write(kMagic, sizeof(kMagic) - 1);
  const auto line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (double v : params.values()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

ControllerParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string magic(sizeof(kMagic) - 1, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kMagic) throw std::runtime_error("not a controller checkpoint: " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);
  const auto P = header.at("P").get<std::size_t>();
  std::vector<double> values(P);
  for (auto& v : values) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
  return ControllerParams(config_from_json(header.at("config")), header.at("seed").get<std::uint64_t>(),
                          std::move(values));
}

}  // namespace nar
