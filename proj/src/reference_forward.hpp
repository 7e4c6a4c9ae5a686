#pragma once

// Scalar-loop controller forward pass, templated on the arithmetic type.
// Shares nothing with the Eigen path in controller.cpp beyond the parameter
// layout; the finite-difference oracle evaluates it in binary128.

#include <cmath>
#include <span>
#include <type_traits>
#include <vector>

#include <quadmath.h>

#include "nar/controller.hpp"

namespace nar::detail {

using Quad = __float128;

template <class T>
T s_exp(T x) {
  if constexpr (std::is_same_v<T, Quad>) return expq(x);
  else return std::exp(x);
}
template <class T>
T s_log(T x) {
  if constexpr (std::is_same_v<T, Quad>) return logq(x);
  else return std::log(x);
}
template <class T>
T s_tanh(T x) {
  if constexpr (std::is_same_v<T, Quad>) return tanhq(x);
  else return std::tanh(x);
}

struct ReplayStep {
  bool is_op;
  int choice;
  bool forced;
};

inline std::vector<ReplayStep> replay_steps(const DecisionTrace& trace) {
  std::vector<ReplayStep> out;
  out.reserve(trace.decisions.size());
  for (const auto& d : trace.decisions) out.push_back({d.kind == DecisionKind::Operator, d.choice, d.forced});
  return out;
}

// Sum of log-probabilities of the non-forced decisions.
template <class T>
T reference_log_prob(std::span<const T> v, const ParamLayout& L, const ControllerConfig& cfg,
                     std::span<const ReplayStep> steps) {
  const int H = L.hidden, K = L.num_ops;
  std::vector<T> h(static_cast<std::size_t>(H), T(0)), c(h), xh(2 * static_cast<std::size_t>(H)),
      z(4 * static_cast<std::size_t>(H));
  const T temperature = T(cfg.temperature), tanh_c = T(cfg.tanh_constant);
  auto sigmoid = [](T x) { return T(1) / (T(1) + s_exp(-x)); };

  int token = L.start_token();
  T total = T(0);
  for (const auto& st : steps) {
    for (int q = 0; q < H; ++q) {
      xh[q] = v[L.embed + static_cast<std::size_t>(token * H + q)];
      xh[H + q] = h[q];
    }
    for (int r = 0; r < 4 * H; ++r) {
      T s = v[L.lstm_b + static_cast<std::size_t>(r)];
      for (int q = 0; q < 2 * H; ++q) s += v[L.lstm_w + static_cast<std::size_t>(r * 2 * H + q)] * xh[q];
      z[r] = s;
    }
    for (int q = 0; q < H; ++q) {
      const T i = sigmoid(z[q]), f = sigmoid(z[H + q]), g = s_tanh(z[2 * H + q]), o = sigmoid(z[3 * H + q]);
      c[q] = f * c[q] + i * g;
      h[q] = o * s_tanh(c[q]);
    }
    const int n = st.is_op ? K : 2;
    const std::size_t w = st.is_op ? L.op_w : L.skip_w;
    const std::size_t b = st.is_op ? L.op_b : L.skip_b;
    std::vector<T> logits(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      T s = v[b + static_cast<std::size_t>(k)];
      for (int q = 0; q < H; ++q) s += v[w + static_cast<std::size_t>(k * H + q)] * h[q];
      s = s / temperature;
      if (cfg.tanh_constant > 0.0) s = tanh_c * s_tanh(s);
      logits[k] = s;
    }
    if (!st.forced) {
      T m = logits[0];
      for (const T& l : logits)
        if (l > m) m = l;
      T sum = T(0);
      for (const T& l : logits) sum += s_exp(l - m);
      total += logits[st.choice] - m - s_log(sum);
    }
    token = st.is_op ? L.op_token(st.choice) : L.skip_token(st.choice);
  }
  return total;
}

}  // namespace nar::detail
