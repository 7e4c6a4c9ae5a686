#include "nar/supernet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

#include "nar/parallel.hpp"
#include "nar/rng.hpp"

namespace nar {

Dataset make_dataset(const DatasetSpec& spec, int width) {
  if (spec.n_train < 2 || spec.n_val < 2) throw std::invalid_argument("dataset: n_train and n_val must be >= 2");
  if (!(spec.noise > 0.0)) throw std::invalid_argument("dataset: noise must be > 0");
  Rng rng(derive_seed(spec.seed, {0x64617461ULL}));
  std::vector<double> dir(static_cast<std::size_t>(width));
  double norm = 0.0;
  for (auto& d : dir) {
    d = rng.normal();
    norm += d * d;
  }
  norm = std::sqrt(norm);
  for (auto& d : dir) d /= norm;

  Dataset data;
  data.width = width;
  auto fill = [&](int n, std::vector<double>& x, std::vector<double>& y) {
    x.resize(static_cast<std::size_t>(n * width));
    y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double label = i % 2;  // balanced, alternating
      const double sign = label > 0.5 ? 0.5 : -0.5;
      y[static_cast<std::size_t>(i)] = label;
      for (int q = 0; q < width; ++q)
        x[static_cast<std::size_t>(i * width + q)] =
            sign * spec.separation * dir[static_cast<std::size_t>(q)] + spec.noise * rng.normal();
    }
  };
  fill(spec.n_train, data.x_train, data.y_train);
  fill(spec.n_val, data.x_val, data.y_val);
  return data;
}

ToySupernetSpec supernet_from_json(const nlohmann::json& j) {
  ToySupernetSpec s;
  if (!j.is_object()) throw std::invalid_argument("supernet: expected object");
  s.feature_width = j.value("feature_width", s.feature_width);
  s.child_steps = j.value("child_steps", s.child_steps);
  s.lr = j.value("lr", s.lr);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.pretrain_archs_per_epoch = j.value("pretrain_archs_per_epoch", s.pretrain_archs_per_epoch);
  s.init_scale = j.value("init_scale", s.init_scale);
  s.seed = j.value("seed", s.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    s.data.n_train = d.value("n_train", s.data.n_train);
    s.data.n_val = d.value("n_val", s.data.n_val);
    s.data.separation = d.value("separation", s.data.separation);
    s.data.noise = d.value("noise", s.data.noise);
    s.data.seed = d.value("seed", s.data.seed);
  }
  return s;
}

nlohmann::json to_json(const ToySupernetSpec& s) {
  return {{"feature_width", s.feature_width},
          {"child_steps", s.child_steps},
          {"lr", s.lr},
          {"batch_size", s.batch_size},
          {"pretrain_archs_per_epoch", s.pretrain_archs_per_epoch},
          {"init_scale", s.init_scale},
          {"seed", s.seed},
          {"data",
           {{"n_train", s.data.n_train},
            {"n_val", s.data.n_val},
            {"separation", s.data.separation},
            {"noise", s.data.noise},
            {"seed", s.data.seed}}}};
}

SupernetOracle::SupernetOracle(SearchSpaceSpec space, ToySupernetSpec spec)
    : space_(std::move(space)), spec_(spec) {
  const int F = spec_.feature_width;
  if (F < 2 || F % 2 != 0) throw std::invalid_argument("supernet: feature_width must be even and >= 2");
  if (spec_.child_steps < 0) throw std::invalid_argument("supernet: child_steps must be >= 0");
  if (spec_.batch_size < 1) throw std::invalid_argument("supernet: batch_size must be >= 1");
  if (!(spec_.lr > 0.0)) throw std::invalid_argument("supernet: lr must be > 0");
  if (!(spec_.init_scale >= 0.0)) throw std::invalid_argument("supernet: init_scale must be >= 0");
  if (spec_.pretrain_archs_per_epoch < 1) throw std::invalid_argument("supernet: pretrain_archs_per_epoch must be >= 1");
  data_ = make_dataset(spec_.data, F);

  const auto& vocab = space_.vocab();
  for (int k = 0; k < vocab.size(); ++k) {
    if (vocab[k].parametric) {
      param_slot_.push_back(n_param_ops_);
      kinds_.push_back(n_param_ops_ % 2 == 0 ? OpKind::Relu : OpKind::Tanh);
      ++n_param_ops_;
    } else {
      param_slot_.push_back(-1);
      kinds_.push_back(vocab[k].name.find("max") != std::string::npos ? OpKind::MaxPair : OpKind::MeanPair);
    }
  }

  head_ = static_cast<std::size_t>(space_.n_nodes() * n_param_ops_) * bank_size();
  params_.assign(head_ + static_cast<std::size_t>(F) + 1, 0.0);
  Rng rng(derive_seed(spec_.seed, {0x62616e6bULL}));
  const double scale = spec_.init_scale * std::sqrt(1.0 / F);
  for (int j = 1; j <= space_.n_nodes(); ++j)
    for (int k = 0; k < vocab.size(); ++k) {
      if (param_slot_[static_cast<std::size_t>(k)] < 0) continue;
      const std::size_t off = bank_offset(j, k);
      for (int q = 0; q < F * F; ++q) params_[off + static_cast<std::size_t>(q)] = scale * rng.normal();
    }
}

std::size_t SupernetOracle::bank_size() const {
  const auto F = static_cast<std::size_t>(spec_.feature_width);
  return F * F + F;
}

std::size_t SupernetOracle::bank_offset(int node, int op) const {
  const int slot = param_slot_.at(static_cast<std::size_t>(op));
  return static_cast<std::size_t>((node - 1) * n_param_ops_ + slot) * bank_size();
}

bool SupernetOracle::has_bank(int node, int op) const {
  return node >= 1 && node <= space_.n_nodes() && op >= 0 && op < space_.num_ops() &&
         param_slot_[static_cast<std::size_t>(op)] >= 0;
}

namespace {

std::uint64_t fnv(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

double bce(double logit, double y) {
  // log(1 + e^z) - y z, stable for both signs.
  return std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit))) - y * logit;
}

}  // namespace

std::uint64_t SupernetOracle::bank_checksum(int node, int op) const {
  if (!has_bank(node, op)) throw std::invalid_argument("supernet: operator owns no bank");
  return fnv(std::span<const double>(params_).subspan(bank_offset(node, op), bank_size()));
}

std::uint64_t SupernetOracle::head_checksum() const { return fnv(std::span<const double>(params_).subspan(head_)); }

// acts (when given) receives, per node, its input then its output.
double SupernetOracle::forward(std::span<const double> p, const ArchitectureVector& arch, const double* x,
                               std::vector<std::vector<double>>* acts) const {
  const int F = spec_.feature_width, n = space_.n_nodes();
  const auto& topo = space_.topology();
  std::vector<std::vector<double>> local;
  auto& a = acts ? *acts : local;
  a.assign(static_cast<std::size_t>(2 * n), std::vector<double>(static_cast<std::size_t>(F), 0.0));

  for (int j = 1; j <= n; ++j) {
    auto& u = a[static_cast<std::size_t>(2 * (j - 1))];
    auto& o = a[static_cast<std::size_t>(2 * (j - 1) + 1)];
    if (j == 1)
      std::copy(x, x + F, u.begin());
    else
      u = a[static_cast<std::size_t>(2 * (j - 2) + 1)];
    const int first = topo.first_edge_of(j);
    for (int e = first; e < first + topo.edges_into(j); ++e) {
      if (!arch.skips[static_cast<std::size_t>(e)]) continue;
      const auto& src = a[static_cast<std::size_t>(2 * (topo.edges[static_cast<std::size_t>(e)].t - 1) + 1)];
      for (int q = 0; q < F; ++q) u[static_cast<std::size_t>(q)] += src[static_cast<std::size_t>(q)];
    }
    const int op = arch.ops[static_cast<std::size_t>(j - 1)];
    const OpKind kind = kinds_[static_cast<std::size_t>(op)];
    if (kind == OpKind::Relu || kind == OpKind::Tanh) {
      const std::size_t off = bank_offset(j, op);
      for (int r = 0; r < F; ++r) {
        double s = p[off + static_cast<std::size_t>(F * F + r)];
        for (int q = 0; q < F; ++q) s += p[off + static_cast<std::size_t>(r * F + q)] * u[static_cast<std::size_t>(q)];
        o[static_cast<std::size_t>(r)] = kind == OpKind::Relu ? std::max(s, 0.0) : std::tanh(s);
      }
    } else {
      for (int q = 0; q < F; ++q) {
        const double u1 = u[static_cast<std::size_t>(q)], u2 = u[static_cast<std::size_t>((q + F / 2) % F)];
        o[static_cast<std::size_t>(q)] = kind == OpKind::MaxPair ? std::max(u1, u2) : 0.5 * (u1 + u2);
      }
    }
  }
  const auto& out = a[static_cast<std::size_t>(2 * n - 1)];
  double logit = p[head_ + static_cast<std::size_t>(F)];
  for (int q = 0; q < F; ++q) logit += p[head_ + static_cast<std::size_t>(q)] * out[static_cast<std::size_t>(q)];
  return logit;
}

void SupernetOracle::train_child(std::vector<double>& p, const ArchitectureVector& arch, std::uint64_t seed) const {
  const int F = spec_.feature_width, n = space_.n_nodes(), B = spec_.batch_size;
  const auto& topo = space_.topology();
  Rng rng(seed);
  std::vector<double> g(p.size());
  std::vector<std::vector<double>> acts, grads(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(F)));
  std::vector<double> du(static_cast<std::size_t>(F));

  // Parameter ranges this child touches.
  std::vector<std::pair<std::size_t, std::size_t>> owned{{head_, p.size()}};
  for (int j = 1; j <= n; ++j)
    if (has_bank(j, arch.ops[static_cast<std::size_t>(j - 1)])) {
      const auto off = bank_offset(j, arch.ops[static_cast<std::size_t>(j - 1)]);
      owned.emplace_back(off, off + bank_size());
    }

  for (int step = 0; step < spec_.child_steps; ++step) {
    for (const auto& [b, e] : owned) std::fill(g.begin() + static_cast<std::ptrdiff_t>(b), g.begin() + static_cast<std::ptrdiff_t>(e), 0.0);
    for (int s = 0; s < B; ++s) {
      const int i = rng.below(data_.n_train());
      const double* x = &data_.x_train[static_cast<std::size_t>(i * F)];
      const double z = forward(p, arch, x, &acts);
      const double dz = 1.0 / (1.0 + std::exp(-z)) - data_.y_train[static_cast<std::size_t>(i)];

      for (auto& v : grads) std::fill(v.begin(), v.end(), 0.0);
      const auto& out = acts[static_cast<std::size_t>(2 * n - 1)];
      for (int q = 0; q < F; ++q) {
        g[head_ + static_cast<std::size_t>(q)] += dz * out[static_cast<std::size_t>(q)];
        grads[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(q)] = dz * p[head_ + static_cast<std::size_t>(q)];
      }
      g[head_ + static_cast<std::size_t>(F)] += dz;

      for (int j = n; j >= 1; --j) {
        const auto& u = acts[static_cast<std::size_t>(2 * (j - 1))];
        const auto& o = acts[static_cast<std::size_t>(2 * (j - 1) + 1)];
        const auto& dout = grads[static_cast<std::size_t>(j - 1)];
        const int op = arch.ops[static_cast<std::size_t>(j - 1)];
        const OpKind kind = kinds_[static_cast<std::size_t>(op)];
        std::fill(du.begin(), du.end(), 0.0);
        if (kind == OpKind::Relu || kind == OpKind::Tanh) {
          const std::size_t off = bank_offset(j, op);
          for (int r = 0; r < F; ++r) {
            const double orr = o[static_cast<std::size_t>(r)];
            const double slope = kind == OpKind::Relu ? (orr > 0.0 ? 1.0 : 0.0) : 1.0 - orr * orr;
            const double da = dout[static_cast<std::size_t>(r)] * slope;
            if (da == 0.0) continue;
            for (int q = 0; q < F; ++q) {
              g[off + static_cast<std::size_t>(r * F + q)] += da * u[static_cast<std::size_t>(q)];
              du[static_cast<std::size_t>(q)] += da * p[off + static_cast<std::size_t>(r * F + q)];
            }
            g[off + static_cast<std::size_t>(F * F + r)] += da;
          }
        } else {
          for (int q = 0; q < F; ++q) {
            const auto partner = static_cast<std::size_t>((q + F / 2) % F);
            const double d = dout[static_cast<std::size_t>(q)];
            if (kind == OpKind::MaxPair) {
              if (u[static_cast<std::size_t>(q)] >= u[partner])
                du[static_cast<std::size_t>(q)] += d;
              else
                du[partner] += d;
            } else {
              du[static_cast<std::size_t>(q)] += 0.5 * d;
              du[partner] += 0.5 * d;
            }
          }
        }
        if (j > 1)
          for (int q = 0; q < F; ++q) grads[static_cast<std::size_t>(j - 2)][static_cast<std::size_t>(q)] += du[static_cast<std::size_t>(q)];
        const int first = topo.first_edge_of(j);
        for (int e = first; e < first + topo.edges_into(j); ++e) {
          if (!arch.skips[static_cast<std::size_t>(e)]) continue;
          auto& dst = grads[static_cast<std::size_t>(topo.edges[static_cast<std::size_t>(e)].t - 1)];
          for (int q = 0; q < F; ++q) dst[static_cast<std::size_t>(q)] += du[static_cast<std::size_t>(q)];
        }
      }
    }
    const double scale = spec_.lr / B;
    for (const auto& [b, e] : owned)
      for (std::size_t c = b; c < e; ++c) p[c] -= scale * g[c];
  }
}

double SupernetOracle::validation_accuracy(const ArchitectureVector& arch) const {
  require_valid(arch, space_.with_frozen(std::nullopt));
  const int F = spec_.feature_width;
  int correct = 0;
  for (int i = 0; i < data_.n_val(); ++i) {
    const double z = forward(params_, arch, &data_.x_val[static_cast<std::size_t>(i * F)], nullptr);
    const double pred = z > 0.0 ? 1.0 : 0.0;
    if (pred == data_.y_val[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / data_.n_val();
}

double SupernetOracle::train_loss(const ArchitectureVector& arch) const {
  const int F = spec_.feature_width;
  double sum = 0.0;
  for (int i = 0; i < data_.n_train(); ++i) {
    const double z = forward(params_, arch, &data_.x_train[static_cast<std::size_t>(i * F)], nullptr);
    sum += bce(z, data_.y_train[static_cast<std::size_t>(i)]);
  }
  return sum / data_.n_train();
}

double SupernetOracle::evaluate(const ArchitectureVector& arch, int step) {
  require_valid(arch, space_.with_frozen(std::nullopt));
  train_child(params_, arch, derive_seed(spec_.seed, {0x6576616cULL, static_cast<std::uint64_t>(step), evaluations_++}));
  return validation_accuracy(arch);
}

std::vector<double> SupernetOracle::evaluate_batch(std::span<const ArchitectureVector> archs, int step,
                                                   int workers) {
  const auto n = static_cast<std::int64_t>(archs.size());
  const std::vector<double> snapshot = params_;
  std::vector<std::vector<double>> trained(archs.size());
  std::vector<double> rewards(archs.size());
  std::vector<std::string> failures(archs.size());
  const std::uint64_t base = evaluations_;

#pragma omp parallel for schedule(dynamic, 1) num_threads(resolve_workers(workers))
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      require_valid(archs[idx], space_.with_frozen(std::nullopt));
      auto p = snapshot;
      train_child(p, archs[idx],
                  derive_seed(spec_.seed, {0x6576616cULL, static_cast<std::uint64_t>(step), base + idx}));
      const int F = spec_.feature_width;
      int correct = 0;
      for (int v = 0; v < data_.n_val(); ++v) {
        const double z = forward(p, archs[idx], &data_.x_val[static_cast<std::size_t>(v * F)], nullptr);
        if ((z > 0.0 ? 1.0 : 0.0) == data_.y_val[static_cast<std::size_t>(v)]) ++correct;
      }
      rewards[idx] = static_cast<double>(correct) / data_.n_val();
      trained[idx] = std::move(p);
    } catch (const std::exception& e) {
      failures[idx] = e.what();
    }
  }
  for (std::size_t i = 0; i < archs.size(); ++i)
    if (trained[i].empty()) throw OracleError(static_cast<long>(i), failures[i]);
  evaluations_ += archs.size();

  // Apply updates in index order. Only changed coordinates are touched, so
  // banks of unselected operators keep their exact bits.
  for (std::size_t i = 0; i < archs.size(); ++i)
    for (std::size_t c = 0; c < params_.size(); ++c)
      if (trained[i][c] != snapshot[c]) params_[c] += trained[i][c] - snapshot[c];
  return rewards;
}

std::vector<ArchitectureVector> SupernetOracle::random_archs(int count, std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<ArchitectureVector> out;
  for (int a = 0; a < count; ++a) {
    ArchitectureVector arch;
    for (int j = 0; j < space_.n_nodes(); ++j) arch.ops.push_back(rng.below(space_.num_ops()));
    if (space_.fixed_skip()) {
      arch.skips = *space_.frozen_skips();
    } else {
      for (int e = 0; e < space_.edge_count(); ++e) arch.skips.push_back(static_cast<std::uint8_t>(rng.below(2)));
    }
    out.push_back(std::move(arch));
  }
  return out;
}

std::vector<double> SupernetOracle::pretrain(int epochs, std::uint64_t seed) {
  if (epochs < 0) throw std::invalid_argument("pretrain epochs must be >= 0");
  const auto probes = random_archs(8, derive_seed(seed, {0x70726f62ULL}));
  auto probe_loss = [&] {
    double s = 0.0;
    for (const auto& a : probes) s += train_loss(a);
    return s / static_cast<double>(probes.size());
  };
  std::vector<double> losses{probe_loss()};
  for (int e = 0; e < epochs; ++e) {
    const auto archs =
        random_archs(spec_.pretrain_archs_per_epoch, derive_seed(seed, {0x65706f63ULL, static_cast<std::uint64_t>(e)}));
    for (std::size_t a = 0; a < archs.size(); ++a)
      train_child(params_, archs[a],
                  derive_seed(seed, {0x70726574ULL, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(a)}));
    losses.push_back(probe_loss());
  }
  return losses;
}

}  // namespace nar
