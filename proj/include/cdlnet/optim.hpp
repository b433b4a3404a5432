#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cdlnet/config.hpp"
#include "cdlnet/model.hpp"

// Adam with projection onto the model constraints, the step-decay learning
// rate schedule and the validation-driven backtracking rule.
namespace cdlnet {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Moment estimates flattened in for_each_array order.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

template <class T>
AdamState make_adam_state(const ModelParams<T>& theta) {
  std::size_t n = 0;
  for_each_array(theta, [&](const std::string&, auto s) { n += s.size(); });
  return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
}

// One bias-corrected Adam update followed by project_constraints. The step
// is refused, leaving theta and state untouched, if any gradient is not finite.
template <class T>
void adam_step(ModelParams<T>& theta, const GradientSet<T>& grad, AdamState& state, double lr) {
  std::vector<T> g;
  g.reserve(state.m.size());
  for_each_array(grad, [&](const std::string& name, auto s) {
    for (T x : s)
      if (!std::isfinite(static_cast<double>(x))) throw NumericError("adam_step: non-finite gradient in " + name);
    g.insert(g.end(), s.begin(), s.end());
  });
  if (g.size() != state.m.size() || state.v.size() != state.m.size())
    throw ShapeError("adam_step: optimizer state does not match the parameters");

  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  std::size_t i = 0;
  for_each_array(theta, [&](const std::string&, std::span<T> p) {
    for (T& x : p) {
      const double gi = static_cast<double>(g[i]);
      state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * gi;
      state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * gi * gi;
      x -= static_cast<T>(lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + kAdamEps));
      ++i;
    }
  });
  theta = project_constraints(std::move(theta));
}

// lr0 * decay^floor(epoch / every) * backtrack_factor^backtracks
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg, std::size_t backtracks = 0) {
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every)) *
         std::pow(cfg.backtrack_factor, static_cast<double>(backtracks));
}

enum class BacktrackAction { save, restore };

// Decision at a validation point given the PSNR history before this point.
// Restores when the current PSNR falls more than the threshold below the
// best so far; with no history (or no checkpoint yet) it always saves.
inline BacktrackAction maybe_backtrack(const std::vector<double>& history, double current, const TrainConfig& cfg,
                                       bool have_checkpoint = true) {
  if (history.empty() || !have_checkpoint) return BacktrackAction::save;
  double best = history.front();
  for (double h : history) best = std::max(best, h);
  return current < best - cfg.backtrack_threshold_db ? BacktrackAction::restore : BacktrackAction::save;
}

}  // namespace cdlnet
