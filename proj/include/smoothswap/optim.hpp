#pragma once

#include <string>
#include <vector>

#include "smoothswap/nn.hpp"

namespace smoothswap {

struct AdamConfig {
  real learning_rate = real(1e-3);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real epsilon = real(1e-8);
};

// Standard Adam with bias correction over the trainable entries of a
// ParamStore. Missing gradients count as zero; non-finite gradients abort
// with the offending parameter's name.
class Adam {
 public:
  Adam(ParamStore& store, AdamConfig config);

  void step(real lr_override = real(-1));
  int64_t step_count() const { return step_count_; }

  // Moment buffers for checkpointing, aligned with trainable entries.
  struct Slot {
    std::string param_name;
    Tensor first_moment;
    Tensor second_moment;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Slot>& slots() { return slots_; }
  void set_step_count(int64_t n) { step_count_ = n; }
  const AdamConfig& config() const { return config_; }

 private:
  ParamStore& store_;
  AdamConfig config_;
  std::vector<Slot> slots_;
  int64_t step_count_ = 0;
};

// Step decay: lr drops by 10x once the completed fraction of total steps
// reaches each milestone (0.6, 0.75, 0.9 by default).
struct StepDecaySchedule {
  real base_lr = real(1e-3);
  int64_t total_steps = 0;
  std::vector<real> milestones = {real(0.6), real(0.75), real(0.9)};
  real factor = real(0.1);

  real lr_at(int64_t step) const {
    real lr = base_lr;
    for (real m : milestones) {
      if (static_cast<real>(step) >= m * static_cast<real>(total_steps)) lr *= factor;
    }
    return lr;
  }
};

}  // namespace smoothswap
