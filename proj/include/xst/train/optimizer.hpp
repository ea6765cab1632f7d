// Adam with inverse-square-root warm-up.

#pragma once

#include <cstdint>
#include <vector>

#include "xst/model/model.hpp"

namespace xst {

// Defaults are tuned for the small desk model; full_scale() gives the
// Transformer-base values.
struct AdamConfig {
  double base_lr = 2e-3;
  std::uint64_t warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;

  void validate() const;
  static AdamConfig full_scale() { return {2e-4, 25000, 0.9, 0.98, 1e-8}; }
};

// base_lr * min(t / warmup, sqrt(warmup / t)) for t >= 1; base_lr when
// warmup is 0.
double learning_rate(const AdamConfig& config, std::uint64_t step);

// Parameters that received no gradient since the last step (for example the
// acoustic branch during a text-only step) are left untouched, moments
// included. Gradients are released after every step.
class Adam {
 public:
  Adam(const AdamConfig& config, std::vector<NamedTensor<float>>& params);

  // Applies one update and returns the learning rate used.
  double step();

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }
  // Per-parameter update counts (bias correction uses these).
  const std::vector<std::uint64_t>& parameter_steps() const { return param_steps_; }

 private:
  AdamConfig config_;
  std::vector<NamedTensor<float>>* params_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<float>> m_, v_;
  std::vector<std::uint64_t> param_steps_;
};

}  // namespace xst
