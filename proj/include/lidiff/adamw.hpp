#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lidiff/denoiser.hpp"
#include "lidiff/error.hpp"

namespace lidiff {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(learning_rate > 0.0, Errc::param, "learning rate must be positive");
    require(weight_decay >= 0.0, Errc::param, "weight decay must be non-negative");
  }
};

/// First/second moments per parameter tensor plus the shared step counter.
template <typename S>
struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<S>> first;
  std::vector<std::vector<S>> second;
};

/// One decoupled-weight-decay Adam update over parallel parameter/gradient
/// spans. Decay is applied to the parameters first, then the bias-corrected
/// moment step.
template <typename S>
void adamw_update(std::span<const std::span<S>> params, std::span<const std::span<const S>> grads,
                  const OptimizerConfig& cfg, AdamWState<S>& state) {
  cfg.validate();
  require(params.size() == grads.size(), Errc::shape, "parameter/gradient count mismatch");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.size(), S(0));
      state.second.emplace_back(p.size(), S(0));
    }
  }
  require(state.first.size() == params.size(), Errc::shape,
          "optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].size() == grads[i].size() && state.first[i].size() == params[i].size(),
            Errc::shape, "gradient shape does not match parameter " + std::to_string(i));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = static_cast<double>(grads[i][j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      double p = static_cast<double>(params[i][j]) * decay;
      p -= cfg.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      params[i][j] = static_cast<S>(p);
    }
  }
}

/// Applies adamw_update to a model's accumulated gradients. Parameters with
/// no gradient this step are treated as having zero gradient.
template <typename S>
void optimizer_step(Denoiser<S>& model, const OptimizerConfig& cfg, AdamWState<S>& state) {
  auto params = model.parameters();
  std::vector<std::vector<S>> zeros;
  zeros.reserve(params.size());
  std::vector<std::span<S>> pspans;
  std::vector<std::span<const S>> gspans;
  for (auto& p : params) {
    pspans.emplace_back(p.var->value.data);
    if (p.var->grad.empty()) {
      zeros.emplace_back(p.var->value.size(), S(0));
      gspans.emplace_back(zeros.back());
    } else {
      gspans.emplace_back(p.var->grad.data);
    }
  }
  adamw_update<S>(pspans, gspans, cfg, state);
}

}  // namespace lidiff
