#include "smoothswap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "smoothswap/ops.hpp"

namespace smoothswap {

namespace {

thread_local bool g_grad_mode = true;

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

}  // namespace

bool GradMode::enabled() { return g_grad_mode; }
void GradMode::set(bool v) { g_grad_mode = v; }

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), real(0));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<real> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    std::ostringstream os;
    os << "from_data: shape holds " << shape_numel(shape) << " elements but data has "
       << data.size();
    throw ShapeError(os.str());
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.impl_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(real value) { return full({1}, value); }

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, real stddev) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.impl_->data) v = static_cast<real>(rng.normal()) * stddev;
  return t;
}

int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < impl_->shape.size(); ++i) {
    if (i) os << ",";
    os << impl_->shape[i];
  }
  os << "]";
  return os.str();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

void Tensor::accumulate_grad(std::span<const real> g) {
  if (g.size() != impl_->data.size()) {
    throw ShapeError("accumulate_grad: gradient size " + std::to_string(g.size()) +
                     " does not match tensor size " + std::to_string(impl_->data.size()));
  }
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), real(0));
  for (size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

Tensor Tensor::detach() const {
  Tensor t = Tensor::zeros(impl_->shape);
  t.impl_->data = impl_->data;
  return t;
}

real Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements, expected 1");
  }
  return impl_->data[0];
}

void attach_node(Tensor& out, std::string name, std::vector<Tensor> inputs,
                 std::function<std::vector<Tensor>(const Tensor&)> vjp) {
  if (!GradMode::enabled()) return;
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) {
      needs = true;
      break;
    }
  }
  if (!needs) return;
  auto node = std::make_shared<Node>();
  node->name = std::move(name);
  node->inputs = std::move(inputs);
  node->vjp = std::move(vjp);
  out.impl()->grad_fn = node;
  out.impl()->requires_grad = true;
}

namespace {

// Reverse topological order over grad_fn nodes reachable from root.
// Iterative DFS; deterministic given graph construction order.
std::vector<TensorImpl*> topo_order(TensorImpl* root) {
  std::vector<TensorImpl*> post;
  if (!root->grad_fn) return post;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    TensorImpl* impl = top.first;
    if (top.second >= impl->grad_fn->inputs.size()) {
      post.push_back(impl);
      stack.pop_back();
      continue;
    }
    TensorImpl* child = impl->grad_fn->inputs[top.second].impl();
    ++top.second;
    if (child && child->grad_fn && !visited.count(child)) {
      visited.insert(child);
      stack.emplace_back(child, 0);
    }
  }
  std::reverse(post.begin(), post.end());
  return post;
}

void run_backward(const Tensor& loss, bool create_graph,
                  std::unordered_map<TensorImpl*, Tensor>* grads_out,
                  bool accumulate_into_leaves) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + loss.shape_str());
  }
  std::unordered_map<TensorImpl*, Tensor> grads;
  grads[loss.impl()] = Tensor::full(loss.shape(), real(1));

  const auto order = topo_order(loss.impl());
  for (TensorImpl* impl : order) {
    auto it = grads.find(impl);
    if (it == grads.end()) continue;  // no gradient flowed into this branch
    Tensor gout = it->second;
    const auto& node = impl->grad_fn;
    std::vector<Tensor> gins;
    {
      if (create_graph) {
        gins = node->vjp(gout);
      } else {
        NoGradGuard ng;
        gins = node->vjp(gout);
      }
    }
    if (gins.size() != node->inputs.size()) {
      throw Error("internal: vjp of " + node->name + " returned " + std::to_string(gins.size()) +
                  " grads for " + std::to_string(node->inputs.size()) + " inputs");
    }
    for (size_t i = 0; i < gins.size(); ++i) {
      const Tensor& input = node->inputs[i];
      if (!input.defined() || !input.requires_grad()) continue;
      if (!gins[i].defined()) continue;
      auto git = grads.find(input.impl());
      if (git == grads.end()) {
        grads.emplace(input.impl(), gins[i]);
      } else if (create_graph) {
        git->second = ops::add(git->second, gins[i]);
      } else {
        NoGradGuard ng;
        git->second = ops::add(git->second, gins[i]);
      }
    }
    // Interior gradients are no longer needed once their node is processed.
    if (!grads_out && impl != loss.impl()) grads.erase(impl);
  }

  if (accumulate_into_leaves) {
    for (auto& [impl, g] : grads) {
      if (!impl->requires_grad || impl->grad_fn) continue;
      if (impl->grad.empty()) impl->grad.assign(impl->data.size(), real(0));
      const auto gd = g.data();
      for (size_t i = 0; i < gd.size(); ++i) impl->grad[i] += gd[i];
    }
  }
  if (grads_out) *grads_out = std::move(grads);
}

}  // namespace

void backward(const Tensor& loss, bool create_graph) {
  run_backward(loss, create_graph, nullptr, /*accumulate_into_leaves=*/true);
}

std::vector<Tensor> grad_of(const Tensor& output, const std::vector<Tensor>& inputs,
                            bool create_graph) {
  std::unordered_map<TensorImpl*, Tensor> grads;
  run_backward(output, create_graph, &grads, /*accumulate_into_leaves=*/false);
  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = grads.find(in.impl());
    result.push_back(it == grads.end() ? Tensor::zeros(in.shape()) : it->second);
  }
  return result;
}

}  // namespace smoothswap
