#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smoothswap/common.hpp"
#include "smoothswap/rng.hpp"

namespace smoothswap {

class Tensor;

// One recorded operation in the reverse-mode graph. `vjp` maps the gradient
// of the node's output to gradients of each input (same order as `inputs`).
// VJPs are themselves written with tensor ops, so running backward with
// grad recording enabled yields a differentiable gradient graph (needed by
// the R1 penalty's second-order term).
struct Node {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<std::vector<Tensor>(const Tensor& grad_out)> vjp;
};

struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<real> data;
  bool requires_grad = false;
  std::vector<real> grad;  // empty until first accumulation
  std::shared_ptr<Node> grad_fn;
};

// Value-semantic handle to a shared tensor. Single-writer: a graph is built
// and differentiated by one logical thread; ops are pure given exclusive
// access to their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, real value, bool requires_grad = false);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<real> data,
                          bool requires_grad = false);
  static Tensor scalar(real value);
  // He-normal init with the given fan-in.
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, real stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  size_t ndim() const { return impl_->shape.size(); }
  int64_t numel() const;
  std::string shape_str() const;

  std::span<const real> data() const { return impl_->data; }
  // Direct mutation is for leaf setup and optimizer updates only; mutating a
  // tensor that participates in a live graph is undefined.
  std::span<real> mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const real> grad() const { return impl_->grad; }
  std::span<real> mutable_grad() { return impl_->grad; }
  void zero_grad();
  void accumulate_grad(std::span<const real> g);

  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }
  bool is_leaf() const { return !impl_ || impl_->grad_fn == nullptr; }

  // Value copy detached from the graph.
  Tensor detach() const;

  real item() const;

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Thread-local switch for graph recording; off inside plain backward passes
// and evaluation code.
struct GradMode {
  static bool enabled();
  static void set(bool v);
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }

 private:
  bool prev_;
};

// Attaches a node to `out` when recording is on and any input requires grad.
void attach_node(Tensor& out, std::string name, std::vector<Tensor> inputs,
                 std::function<std::vector<Tensor>(const Tensor&)> vjp);

// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
// Accumulation is additive; callers zero grads between steps. `loss` must be
// scalar (numel 1). With create_graph the returned gradients stay recorded,
// enabling higher-order differentiation.
void backward(const Tensor& loss, bool create_graph = false);

// Gradients of a scalar output w.r.t. selected tensors, returned as tensors
// without touching .grad buffers. Unreachable inputs yield zero tensors.
std::vector<Tensor> grad_of(const Tensor& output, const std::vector<Tensor>& inputs,
                            bool create_graph = false);

}  // namespace smoothswap
