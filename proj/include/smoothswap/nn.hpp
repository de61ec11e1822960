#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smoothswap/ops.hpp"
#include "smoothswap/rng.hpp"
#include "smoothswap/tensor.hpp"

namespace smoothswap {

// Flat registry of named tensors owned by a network. Trainable entries get
// requires_grad; buffers (running statistics) are saved in checkpoints but
// never touched by the optimizer.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t, bool trainable = true);

  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;
  int64_t total_params() const;

  void zero_grad();
  void set_trainable(bool trainable);  // freezes/unfreezes every entry
  // FNV-1a hash over raw parameter bytes; used by freeze assertions.
  uint64_t checksum() const;

 private:
  std::vector<Entry> entries_;
};

struct Conv2dLayer {
  Tensor weight, bias;
  int stride = 1, padding = 1;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& store, const std::string& name, int64_t cin, int64_t cout, int64_t k,
              int stride, int padding, Rng& rng, bool zero_init = false);
  Tensor forward(const Tensor& x) const {
    return ops::conv2d(x, weight, bias, stride, padding);
  }
};

struct LinearLayer {
  Tensor weight, bias;

  LinearLayer() = default;
  LinearLayer(ParamStore& store, const std::string& name, int64_t fin, int64_t fout, Rng& rng,
              bool zero_init = false);
  Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

// Per-group standardization over [N,C,H,W] followed by a channel affine.
// Built from differentiable primitives, so second-order graphs work too.
struct GroupNormLayer {
  Tensor gamma, beta;
  int groups = 1;
  real eps = real(1e-5);

  GroupNormLayer() = default;
  GroupNormLayer(ParamStore& store, const std::string& name, int64_t channels, int groups,
                 real eps = real(1e-5));
  Tensor forward(const Tensor& x) const;
};

// 1-D batch norm for the embedder head. Training mode uses batch statistics
// and updates running buffers; eval mode is a fixed affine map.
struct BatchNorm1dLayer {
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // buffers
  real eps = real(1e-5);
  real momentum = real(0.1);

  BatchNorm1dLayer() = default;
  BatchNorm1dLayer(ParamStore& store, const std::string& name, int64_t features,
                   real eps = real(1e-5), real momentum = real(0.1));
  Tensor forward(const Tensor& x, bool training);
};

// Stand-alone functional form used by op-level tests.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, real eps);

// Largest of {8,4,2,1} dividing the channel count.
int pick_groups(int64_t channels);

}  // namespace smoothswap
