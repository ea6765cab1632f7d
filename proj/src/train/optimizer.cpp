#include "xst/train/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xst {

void AdamConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw std::invalid_argument("base_lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
}

double learning_rate(const AdamConfig& config, std::uint64_t step) {
  if (step == 0) throw std::invalid_argument("learning_rate: steps count from 1");
  if (config.warmup_steps == 0) return config.base_lr;
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(config.warmup_steps);
  return config.base_lr * std::min(t / w, std::sqrt(w / t));
}

Adam::Adam(const AdamConfig& config, std::vector<NamedTensor<float>>& params) : config_(config), params_(&params) {
  config_.validate();
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.size(), 0.0f);
    v_.emplace_back(p.tensor.size(), 0.0f);
  }
  param_steps_.assign(params.size(), 0);
}

double Adam::step() {
  ++step_;
  const double lr = learning_rate(config_, step_);
  const double b1 = config_.beta1, b2 = config_.beta2;
  for (std::size_t p = 0; p < params_->size(); ++p) {
    auto& tensor = (*params_)[p].tensor;
    if (!tensor.has_grad()) continue;
    if (m_[p].size() != tensor.size()) throw std::logic_error("Adam: parameter " + (*params_)[p].name + " changed size");
    const std::uint64_t t = ++param_steps_[p];
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto g = tensor.grad();
    auto w = tensor.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      w[i] = static_cast<float>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps));
    }
    tensor.release_grad();
  }
  return lr;
}

}  // namespace xst
