#include "smoothswap/nn.hpp"

#include <cmath>
#include <cstring>

namespace smoothswap {

Tensor ParamStore::add(const std::string& name, Tensor t, bool trainable) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError("ParamStore: duplicate parameter name '" + name + "'");
  }
  t.set_requires_grad(trainable);
  entries_.push_back({name, t, trainable});
  return t;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ConfigError("ParamStore: no parameter named '" + name + "'");
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamStore::set_trainable(bool trainable) {
  for (auto& e : entries_) {
    if (e.trainable) e.tensor.set_requires_grad(trainable);
  }
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    mix(e.tensor.data().data(), e.tensor.data().size() * sizeof(real));
  }
  return h;
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& name, int64_t cin, int64_t cout,
                         int64_t k, int stride_, int padding_, Rng& rng, bool zero_init)
    : stride(stride_), padding(padding_) {
  const real std = zero_init ? real(0) : static_cast<real>(std::sqrt(2.0 / double(cin * k * k)));
  weight = store.add(name + ".weight", Tensor::randn({cout, cin, k, k}, rng, std));
  bias = store.add(name + ".bias", Tensor::zeros({cout}));
}

LinearLayer::LinearLayer(ParamStore& store, const std::string& name, int64_t fin, int64_t fout,
                         Rng& rng, bool zero_init) {
  const real std = zero_init ? real(0) : static_cast<real>(std::sqrt(2.0 / double(fin)));
  weight = store.add(name + ".weight", Tensor::randn({fout, fin}, rng, std));
  bias = store.add(name + ".bias", Tensor::zeros({fout}));
}

GroupNormLayer::GroupNormLayer(ParamStore& store, const std::string& name, int64_t channels,
                               int groups_, real eps_)
    : groups(groups_), eps(eps_) {
  if (groups < 1 || channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
  gamma = store.add(name + ".gamma", Tensor::full({channels}, real(1)));
  beta = store.add(name + ".beta", Tensor::zeros({channels}));
}

Tensor GroupNormLayer::forward(const Tensor& x) const {
  return group_norm(x, groups, gamma, beta, eps);
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, real eps) {
  if (x.ndim() != 4) throw ShapeError("group_norm: need [N,C,H,W], got " + x.shape_str());
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (groups < 1 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
  if (eps <= 0) throw ConfigError("group_norm: eps must be positive");
  const int64_t s = (c / groups) * h * w;
  Tensor r = ops::reshape(x, {n * groups, s});
  Tensor mean = ops::scale(ops::lastdim_sum(r), real(1) / real(s));
  Tensor centered = ops::lastdim_badd(r, ops::neg(mean));
  Tensor var = ops::scale(ops::lastdim_sum(ops::square(centered)), real(1) / real(s));
  Tensor inv = ops::reciprocal(ops::sqrt_op(ops::add_scalar(var, eps)));
  Tensor normed = ops::reshape(ops::lastdim_bmul(centered, inv), {n, c, h, w});
  return ops::chan_badd(ops::chan_bmul(normed, gamma), beta);
}

BatchNorm1dLayer::BatchNorm1dLayer(ParamStore& store, const std::string& name, int64_t features,
                                   real eps_, real momentum_)
    : eps(eps_), momentum(momentum_) {
  gamma = store.add(name + ".gamma", Tensor::full({features}, real(1)));
  beta = store.add(name + ".beta", Tensor::zeros({features}));
  running_mean = store.add(name + ".running_mean", Tensor::zeros({features}), /*trainable=*/false);
  running_var = store.add(name + ".running_var", Tensor::full({features}, real(1)),
                          /*trainable=*/false);
}

Tensor BatchNorm1dLayer::forward(const Tensor& x, bool training) {
  if (x.ndim() != 2 || x.dim(1) != gamma.dim(0)) {
    throw ShapeError("batch_norm: input " + x.shape_str() + " does not match feature count " +
                     std::to_string(gamma.dim(0)));
  }
  const int64_t n = x.dim(0);
  if (training) {
    if (n < 2) {
      throw ContractError("batch_norm: training mode needs a batch of >= 2, got " +
                          std::to_string(n));
    }
    Tensor mean = ops::scale(ops::col_sum(x), real(1) / real(n));
    Tensor centered = ops::col_badd(x, ops::neg(mean));
    Tensor var = ops::scale(ops::col_sum(ops::square(centered)), real(1) / real(n));
    Tensor inv = ops::reciprocal(ops::sqrt_op(ops::add_scalar(var, eps)));
    Tensor normed = ops::col_bmul(centered, inv);
    // EMA update of the running buffers with the (graph-free) batch moments.
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const auto bm = mean.data();
    const auto bv = var.data();
    for (size_t i = 0; i < rm.size(); ++i) {
      rm[i] = (real(1) - momentum) * rm[i] + momentum * bm[i];
      rv[i] = (real(1) - momentum) * rv[i] + momentum * bv[i];
    }
    return ops::col_badd(ops::col_bmul(normed, gamma), beta);
  }
  Tensor centered = ops::col_badd(x, ops::neg(running_mean.detach()));
  Tensor inv_data = running_var.detach();
  auto iv = inv_data.mutable_data();
  for (auto& v : iv) v = real(1) / std::sqrt(v + eps);
  Tensor normed = ops::col_bmul(centered, inv_data);
  return ops::col_badd(ops::col_bmul(normed, gamma), beta);
}

int pick_groups(int64_t channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

}  // namespace smoothswap
