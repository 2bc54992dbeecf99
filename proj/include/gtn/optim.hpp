#pragma once

// Adam with bias correction and a step-decay learning-rate schedule.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtn/nn.hpp"

namespace gtn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_factor = 0.1;     // lr multiplier applied every `decay_every` epochs
  std::size_t decay_every = 60;  // 0 disables decay
};

struct OptimizerState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
  std::size_t epoch = 0;

  OptimizerState() = default;
  OptimizerState(const AdamConfig& c, const ParamList& params) : cfg(c) {
    if (!(c.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
    if (!(c.decay_factor > 0.0 && c.decay_factor <= 1.0))
      throw std::invalid_argument("adam: decay factor must lie in (0, 1]");
    for (const auto& t : params.tensors) {
      m.emplace_back(t.numel(), 0.0);
      v.emplace_back(t.numel(), 0.0);
    }
  }

  double current_lr() const {
    if (cfg.decay_every == 0) return cfg.lr;
    return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
  }
};

/// One Adam update of every parameter. All parameters must carry gradients.
inline void adam_step(ParamList& params, OptimizerState& state) {
  if (state.m.size() != params.size()) throw std::logic_error("adam: optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!params.tensors[k].has_grad()) throw std::logic_error("adam: missing gradient for '" + params.names[k] + "'");
  ++state.step;
  const auto& c = state.cfg;
  const double lr = state.current_lr();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params.tensors[k];
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
}

}  // namespace gtn
