// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "selftrain/autodiff.hpp"
#include "selftrain/model.hpp"

namespace selftrain {

/// Linear warmup from lr_start to lr_peak, then cosine decay to zero at
/// total_steps.
struct Schedule {
  std::size_t warmup_steps = 100;
  double lr_start = 0.001;
  double lr_peak = 0.1;
  std::size_t total_steps = 1000;

  void validate() const {
    if (total_steps == 0)
      throw std::invalid_argument("schedule total_steps must be positive");
    if (warmup_steps >= total_steps)
      throw std::invalid_argument("warmup_steps must be below total_steps");
    if (!(lr_start > 0.0) || !(lr_peak > 0.0))
      throw std::invalid_argument("learning rates must be positive");
    if (lr_start > lr_peak)
      throw std::invalid_argument("lr_start must not exceed lr_peak");
  }

  friend bool operator==(const Schedule &, const Schedule &) = default;
};

inline double lr_at(const Schedule &s, std::size_t step) {
  s.validate();
  if (step > s.total_steps)
    throw std::out_of_range("step " + std::to_string(step) +
                            " beyond schedule of " +
                            std::to_string(s.total_steps));
  if (step < s.warmup_steps) {
    const double frac =
        static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.lr_start + (s.lr_peak - s.lr_start) * frac;
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, Tensor, std::less<>> velocity;
};

/// Heavy-ball SGD: v <- m*v + g + wd*p, p <- p - lr*v. Decay applies to
/// ".weight" tensors only.
inline void sgd_step(ParamSet &params, const Gradients &grads,
                     OptimizerState &state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw std::invalid_argument("learning rate must be finite and >= 0");
  if (!(state.momentum >= 0.0 && state.momentum < 1.0))
    throw std::invalid_argument("momentum must be in [0, 1)");
  for (const auto &[name, g] : grads)
    if (!g.all_finite())
      throw std::domain_error("non-finite gradient for parameter '" + name +
                              "'");

  for (auto &[name, p] : params.tensors) {
    auto git = grads.find(name);
    if (git == grads.end())
      continue;
    const Tensor &g = git->second;
    if (g.shape() != p.shape())
      throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
    auto [vit, fresh] = state.velocity.try_emplace(name, p.shape(), 0.0);
    Tensor &v = vit->second;
    const double wd = is_weight_name(name) ? state.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + wd * p[i];
      p[i] -= lr * v[i];
    }
  }
}

} // namespace selftrain
