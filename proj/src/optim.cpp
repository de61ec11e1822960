#include "smoothswap/optim.hpp"

#include <cmath>

namespace smoothswap {

Adam::Adam(ParamStore& store, AdamConfig config) : store_(store), config_(config) {
  if (config_.learning_rate <= 0 || config_.beta1 <= 0 || config_.beta2 <= 0 ||
      config_.epsilon <= 0) {
    throw ConfigError("adam: learning_rate, betas and epsilon must be positive");
  }
  for (const auto& e : store_.entries()) {
    if (!e.trainable) continue;
    slots_.push_back({e.name, Tensor::zeros(e.tensor.shape()), Tensor::zeros(e.tensor.shape())});
  }
}

void Adam::step(real lr_override) {
  const real lr = lr_override > 0 ? lr_override : config_.learning_rate;
  ++step_count_;
  const real bc1 = real(1) - static_cast<real>(std::pow(config_.beta1, step_count_));
  const real bc2 = real(1) - static_cast<real>(std::pow(config_.beta2, step_count_));
  size_t slot_idx = 0;
  for (const auto& e : store_.entries()) {
    if (!e.trainable) continue;
    Slot& slot = slots_[slot_idx++];
    Tensor param = e.tensor;
    auto p = param.mutable_data();
    auto m = slot.first_moment.mutable_data();
    auto v = slot.second_moment.mutable_data();
    if (!param.has_grad()) continue;  // zero gradient: parameters unchanged
    auto g = param.grad();
    for (size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw DivergenceError("adam: non-finite gradient in parameter '" + e.name + "'");
      }
      m[i] = config_.beta1 * m[i] + (real(1) - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (real(1) - config_.beta2) * g[i] * g[i];
      const real mhat = m[i] / bc1;
      const real vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace smoothswap
