#include "smoothswap/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace smoothswap::ops {

namespace {

using CMat = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MMat = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                     " do not match");
  }
}

void require_ndim(const Tensor& a, size_t nd, const char* op) {
  if (a.ndim() != nd) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(nd) +
                     "-d tensor, got shape " + a.shape_str());
  }
}

template <typename F>
Tensor unary_map(const Tensor& a, F&& f) {
  Tensor out = Tensor::zeros(a.shape());
  const auto in = a.data();
  auto o = out.mutable_data();
  const int64_t n = a.numel();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (int64_t i = 0; i < n; ++i) o[i] = f(in[i]);
  return out;
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out = Tensor::zeros(a.shape());
  const auto x = a.data();
  const auto y = b.data();
  auto o = out.mutable_data();
  const int64_t n = a.numel();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (int64_t i = 0; i < n; ++i) o[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = binary_map(a, b, [](real x, real y) { return x + y; });
  attach_node(out, "add", {a, b},
              [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = binary_map(a, b, [](real x, real y) { return x - y; });
  attach_node(out, "sub", {a, b},
              [](const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = binary_map(a, b, [](real x, real y) { return x * y; });
  attach_node(out, "mul", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{a.requires_grad() ? mul(g, b) : Tensor(),
                               b.requires_grad() ? mul(g, a) : Tensor()};
  });
  return out;
}

Tensor scale(const Tensor& a, real c) {
  Tensor out = unary_map(a, [c](real x) { return x * c; });
  attach_node(out, "scale", {a},
              [c](const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
  return out;
}

Tensor add_scalar(const Tensor& a, real c) {
  Tensor out = unary_map(a, [c](real x) { return x + c; });
  attach_node(out, "add_scalar", {a},
              [](const Tensor& g) { return std::vector<Tensor>{g}; });
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, real(-1)); }

Tensor square(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) { return x * x; });
  attach_node(out, "square", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, scale(a, real(2)))};
  });
  return out;
}

Tensor sqrt_op(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) { return std::sqrt(x); });
  attach_node(out, "sqrt", {a}, [a](const Tensor& g) {
    // d sqrt(a) = g / (2 sqrt(a)); recomputed from the input so higher-order
    // graphs stay valid and no output self-reference is captured.
    return std::vector<Tensor>{scale(mul(g, reciprocal(sqrt_op(a))), real(0.5))};
  });
  return out;
}

Tensor reciprocal(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) { return real(1) / x; });
  attach_node(out, "reciprocal", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{neg(mul(g, square(reciprocal(a))))};
  });
  return out;
}

Tensor exp_op(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) { return std::exp(x); });
  attach_node(out, "exp", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, exp_op(a))};
  });
  return out;
}

Tensor log_op(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) { return std::log(x); });
  attach_node(out, "log", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, reciprocal(a))};
  });
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) {
    return x >= 0 ? real(1) / (real(1) + std::exp(-x))
                  : std::exp(x) / (real(1) + std::exp(x));
  });
  attach_node(out, "sigmoid", {a}, [a](const Tensor& g) {
    Tensor s = sigmoid(a);
    return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), real(1))))};
  });
  return out;
}

Tensor softplus(const Tensor& a) {
  // max(x,0) + log1p(exp(-|x|)) is overflow-safe.
  Tensor out = unary_map(a, [](real x) {
    return std::max(x, real(0)) + std::log1p(std::exp(-std::abs(x)));
  });
  attach_node(out, "softplus", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, sigmoid(a))};
  });
  return out;
}

Tensor silu(const Tensor& a) {
  Tensor out = unary_map(a, [](real x) {
    const real s = x >= 0 ? real(1) / (real(1) + std::exp(-x))
                          : std::exp(x) / (real(1) + std::exp(x));
    return x * s;
  });
  attach_node(out, "silu", {a}, [a](const Tensor& g) {
    Tensor s = sigmoid(a);
    Tensor deriv = mul(s, add_scalar(mul(a, add_scalar(neg(s), real(1))), real(1)));
    return std::vector<Tensor>{mul(g, deriv)};
  });
  return out;
}

Tensor leaky_relu(const Tensor& a, real slope) {
  Tensor out = unary_map(a, [slope](real x) { return x > 0 ? x : slope * x; });
  if (GradMode::enabled() && a.requires_grad()) {
    Tensor mask = unary_map(a, [slope](real x) { return x > 0 ? real(1) : slope; });
    attach_node(out, "leaky_relu", {a}, [mask](const Tensor& g) {
      return std::vector<Tensor>{mul(g, mask)};
    });
  }
  return out;
}

// ---- reductions and broadcasts ----

Tensor sum_all(const Tensor& a) {
  real acc = 0;
  for (real v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  auto shape = a.shape();
  attach_node(out, "sum_all", {a}, [shape](const Tensor& g) {
    return std::vector<Tensor>{expand_scalar(g, shape)};
  });
  return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), real(1) / real(a.numel())); }

Tensor expand_scalar(const Tensor& s, std::vector<int64_t> shape) {
  if (s.numel() != 1) {
    throw ShapeError("expand_scalar: source must be scalar, got " + s.shape_str());
  }
  Tensor out = Tensor::full(shape, s.data()[0]);
  attach_node(out, "expand_scalar", {s},
              [](const Tensor& g) { return std::vector<Tensor>{sum_all(g)}; });
  return out;
}

Tensor lastdim_sum(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("lastdim_sum: need >= 2-d tensor, got " + x.shape_str());
  const int64_t m = x.shape().back();
  std::vector<int64_t> out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out = Tensor::zeros(out_shape);
  const int64_t rows = out.numel();
  const auto in = x.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (rows * m > 65536)
  for (int64_t r = 0; r < rows; ++r) {
    real acc = 0;
    const real* p = in.data() + r * m;
    for (int64_t j = 0; j < m; ++j) acc += p[j];
    o[r] = acc;
  }
  attach_node(out, "lastdim_sum", {x}, [m](const Tensor& g) {
    return std::vector<Tensor>{lastdim_expand(g, m)};
  });
  return out;
}

Tensor lastdim_expand(const Tensor& v, int64_t m) {
  std::vector<int64_t> out_shape = v.shape();
  out_shape.push_back(m);
  Tensor out = Tensor::zeros(out_shape);
  const int64_t rows = v.numel();
  const auto in = v.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (rows * m > 65536)
  for (int64_t r = 0; r < rows; ++r) {
    std::fill(o.data() + r * m, o.data() + (r + 1) * m, in[r]);
  }
  attach_node(out, "lastdim_expand", {v},
              [](const Tensor& g) { return std::vector<Tensor>{lastdim_sum(g)}; });
  return out;
}

namespace {
void require_lastdim_shapes(const Tensor& x, const Tensor& v, const char* op) {
  if (x.ndim() < 2 || v.ndim() + 1 != x.ndim() ||
      !std::equal(v.shape().begin(), v.shape().end(), x.shape().begin())) {
    throw ShapeError(std::string(op) + ": vector shape " + v.shape_str() +
                     " does not match leading dims of " + x.shape_str());
  }
}
}  // namespace

Tensor lastdim_badd(const Tensor& x, const Tensor& v) {
  require_lastdim_shapes(x, v, "lastdim_badd");
  const int64_t m = x.shape().back();
  const int64_t rows = v.numel();
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  const auto vi = v.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (rows * m > 65536)
  for (int64_t r = 0; r < rows; ++r) {
    const real add_v = vi[r];
    const real* p = xi.data() + r * m;
    real* q = o.data() + r * m;
    for (int64_t j = 0; j < m; ++j) q[j] = p[j] + add_v;
  }
  attach_node(out, "lastdim_badd", {x, v}, [](const Tensor& g) {
    return std::vector<Tensor>{g, lastdim_sum(g)};
  });
  return out;
}

Tensor lastdim_bmul(const Tensor& x, const Tensor& v) {
  require_lastdim_shapes(x, v, "lastdim_bmul");
  const int64_t m = x.shape().back();
  const int64_t rows = v.numel();
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  const auto vi = v.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (rows * m > 65536)
  for (int64_t r = 0; r < rows; ++r) {
    const real f = vi[r];
    const real* p = xi.data() + r * m;
    real* q = o.data() + r * m;
    for (int64_t j = 0; j < m; ++j) q[j] = p[j] * f;
  }
  attach_node(out, "lastdim_bmul", {x, v}, [x, v](const Tensor& g) {
    return std::vector<Tensor>{x.requires_grad() ? lastdim_bmul(g, v) : Tensor(),
                               v.requires_grad() ? lastdim_sum(mul(g, x)) : Tensor()};
  });
  return out;
}

// ---- column family on [N, F] ----

namespace {
void require_col_shapes(const Tensor& x, const Tensor& v, const char* op) {
  if (x.ndim() != 2 || v.ndim() != 1 || v.dim(0) != x.dim(1)) {
    throw ShapeError(std::string(op) + ": expected x[N,F] and v[F], got " + x.shape_str() +
                     " and " + v.shape_str());
  }
}
}  // namespace

Tensor col_sum(const Tensor& x) {
  require_ndim(x, 2, "col_sum");
  const int64_t n = x.dim(0), f = x.dim(1);
  Tensor out = Tensor::zeros({f});
  const auto xi = x.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    const real* p = xi.data() + i * f;
    for (int64_t j = 0; j < f; ++j) o[j] += p[j];
  }
  attach_node(out, "col_sum", {x}, [n](const Tensor& g) {
    return std::vector<Tensor>{col_expand(g, n)};
  });
  return out;
}

Tensor col_expand(const Tensor& v, int64_t n) {
  require_ndim(v, 1, "col_expand");
  const int64_t f = v.dim(0);
  Tensor out = Tensor::zeros({n, f});
  const auto vi = v.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(vi.begin(), vi.end(), o.begin() + i * f);
  }
  attach_node(out, "col_expand", {v},
              [](const Tensor& g) { return std::vector<Tensor>{col_sum(g)}; });
  return out;
}

Tensor col_badd(const Tensor& x, const Tensor& v) {
  require_col_shapes(x, v, "col_badd");
  const int64_t n = x.dim(0), f = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  const auto vi = v.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    const real* p = xi.data() + i * f;
    real* q = o.data() + i * f;
    for (int64_t j = 0; j < f; ++j) q[j] = p[j] + vi[j];
  }
  attach_node(out, "col_badd", {x, v}, [](const Tensor& g) {
    return std::vector<Tensor>{g, col_sum(g)};
  });
  return out;
}

Tensor col_bmul(const Tensor& x, const Tensor& v) {
  require_col_shapes(x, v, "col_bmul");
  const int64_t n = x.dim(0), f = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  const auto vi = v.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    const real* p = xi.data() + i * f;
    real* q = o.data() + i * f;
    for (int64_t j = 0; j < f; ++j) q[j] = p[j] * vi[j];
  }
  attach_node(out, "col_bmul", {x, v}, [x, v](const Tensor& g) {
    return std::vector<Tensor>{x.requires_grad() ? col_bmul(g, v) : Tensor(),
                               v.requires_grad() ? col_sum(mul(g, x)) : Tensor()};
  });
  return out;
}

// ---- channel family on [N, C, H, W] ----

namespace {

void require_chan_shapes(const Tensor& x, const Tensor& v, const char* op) {
  if (x.ndim() != 4 || v.ndim() != 1 || v.dim(0) != x.dim(1)) {
    throw ShapeError(std::string(op) + ": expected x[N,C,H,W] and v[C], got " + x.shape_str() +
                     " and " + v.shape_str());
  }
}

Tensor chan_expand(const Tensor& v, int64_t n, int64_t h, int64_t w);

}  // namespace

Tensor chan_sum(const Tensor& x) {
  require_ndim(x, 4, "chan_sum");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({c});
  const auto xi = x.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const real* p = xi.data() + (i * c + ch) * hw;
      real acc = 0;
      for (int64_t k = 0; k < hw; ++k) acc += p[k];
      o[ch] += acc;
    }
  }
  const int64_t h = x.dim(2), w = x.dim(3);
  attach_node(out, "chan_sum", {x}, [n, h, w](const Tensor& g) {
    return std::vector<Tensor>{chan_expand(g, n, h, w)};
  });
  return out;
}

namespace {

Tensor chan_expand(const Tensor& v, int64_t n, int64_t h, int64_t w) {
  const int64_t c = v.dim(0);
  Tensor out = Tensor::zeros({n, c, h, w});
  const auto vi = v.data();
  auto o = out.mutable_data();
  const int64_t hw = h * w;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      real* q = o.data() + (i * c + ch) * hw;
      std::fill(q, q + hw, vi[ch]);
    }
  }
  attach_node(out, "chan_expand", {v},
              [](const Tensor& g) { return std::vector<Tensor>{chan_sum(g)}; });
  return out;
}

}  // namespace

Tensor chan_badd(const Tensor& x, const Tensor& v) {
  require_chan_shapes(x, v, "chan_badd");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  const auto vi = v.data();
  auto o = out.mutable_data();
#pragma omp parallel for collapse(2) schedule(static) if (n * c * hw > 65536)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const real* p = xi.data() + (i * c + ch) * hw;
      real* q = o.data() + (i * c + ch) * hw;
      const real a = vi[ch];
      for (int64_t k = 0; k < hw; ++k) q[k] = p[k] + a;
    }
  }
  attach_node(out, "chan_badd", {x, v}, [](const Tensor& g) {
    return std::vector<Tensor>{g, chan_sum(g)};
  });
  return out;
}

Tensor chan_bmul(const Tensor& x, const Tensor& v) {
  require_chan_shapes(x, v, "chan_bmul");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  const auto vi = v.data();
  auto o = out.mutable_data();
#pragma omp parallel for collapse(2) schedule(static) if (n * c * hw > 65536)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const real* p = xi.data() + (i * c + ch) * hw;
      real* q = o.data() + (i * c + ch) * hw;
      const real f = vi[ch];
      for (int64_t k = 0; k < hw; ++k) q[k] = p[k] * f;
    }
  }
  attach_node(out, "chan_bmul", {x, v}, [x, v](const Tensor& g) {
    return std::vector<Tensor>{x.requires_grad() ? chan_bmul(g, v) : Tensor(),
                               v.requires_grad() ? chan_sum(mul(g, x)) : Tensor()};
  });
  return out;
}

// ---- spatial family ----

Tensor spatial_sum(const Tensor& x) {
  require_ndim(x, 4, "spatial_sum");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  const auto xi = x.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (n * c * hw > 65536)
  for (int64_t r = 0; r < n * c; ++r) {
    const real* p = xi.data() + r * hw;
    real acc = 0;
    for (int64_t k = 0; k < hw; ++k) acc += p[k];
    o[r] = acc;
  }
  const int64_t h = x.dim(2), w = x.dim(3);
  attach_node(out, "spatial_sum", {x}, [h, w](const Tensor& g) {
    return std::vector<Tensor>{spatial_expand(g, h, w)};
  });
  return out;
}

Tensor spatial_expand(const Tensor& v, int64_t h, int64_t w) {
  require_ndim(v, 2, "spatial_expand");
  const int64_t n = v.dim(0), c = v.dim(1);
  Tensor out = Tensor::zeros({n, c, h, w});
  const auto vi = v.data();
  auto o = out.mutable_data();
  const int64_t hw = h * w;
#pragma omp parallel for schedule(static) if (n * c * hw > 65536)
  for (int64_t r = 0; r < n * c; ++r) {
    real* q = o.data() + r * hw;
    std::fill(q, q + hw, vi[r]);
  }
  attach_node(out, "spatial_expand", {v},
              [](const Tensor& g) { return std::vector<Tensor>{spatial_sum(g)}; });
  return out;
}

Tensor broadcast_add_nc(const Tensor& x, const Tensor& v) {
  require_ndim(x, 4, "broadcast_add_nc");
  if (v.ndim() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(1)) {
    throw ShapeError("broadcast_add_nc: vector shape " + v.shape_str() +
                     " does not match [N,C] of " + x.shape_str());
  }
  return add(x, spatial_expand(v, x.dim(2), x.dim(3)));
}

Tensor spatial_mean(const Tensor& x) {
  require_ndim(x, 4, "spatial_mean");
  return scale(spatial_sum(x), real(1) / real(x.dim(2) * x.dim(3)));
}

// ---- shape ----

Tensor reshape(const Tensor& x, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  if (n != x.numel()) {
    throw ShapeError("reshape: cannot view " + x.shape_str() + " as " +
                     Tensor::zeros(shape).shape_str());
  }
  Tensor out = Tensor::zeros(shape);
  std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
  auto orig = x.shape();
  attach_node(out, "reshape", {x}, [orig](const Tensor& g) {
    return std::vector<Tensor>{reshape(g, orig)};
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_ndim(a, 4, "concat_channels");
  require_ndim(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: shapes " + a.shape_str() + " and " + b.shape_str() +
                     " differ outside the channel dim");
  }
  const int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out = Tensor::zeros({n, ca + cb, a.dim(2), a.dim(3)});
  const auto ai = a.data();
  const auto bi = b.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(ai.begin() + i * ca * hw, ai.begin() + (i + 1) * ca * hw,
              o.begin() + i * (ca + cb) * hw);
    std::copy(bi.begin() + i * cb * hw, bi.begin() + (i + 1) * cb * hw,
              o.begin() + (i * (ca + cb) + ca) * hw);
  }
  attach_node(out, "concat_channels", {a, b}, [ca, cb](const Tensor& g) {
    return std::vector<Tensor>{slice_channels(g, 0, ca), slice_channels(g, ca, ca + cb)};
  });
  return out;
}

namespace {
Tensor channel_pad(const Tensor& x, int64_t c0, int64_t c_total);
}

Tensor slice_channels(const Tensor& x, int64_t c0, int64_t c1) {
  require_ndim(x, 4, "slice_channels");
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1) {
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + x.shape_str());
  }
  const int64_t n = x.dim(0), c = x.dim(1), cs = c1 - c0, hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({n, cs, x.dim(2), x.dim(3)});
  const auto xi = x.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(xi.begin() + (i * c + c0) * hw, xi.begin() + (i * c + c1) * hw,
              o.begin() + i * cs * hw);
  }
  attach_node(out, "slice_channels", {x}, [c0, c](const Tensor& g) {
    return std::vector<Tensor>{channel_pad(g, c0, c)};
  });
  return out;
}

namespace {

// Embeds [N,Cs,H,W] into zeros of [N,c_total,H,W] starting at channel c0.
Tensor channel_pad(const Tensor& x, int64_t c0, int64_t c_total) {
  const int64_t n = x.dim(0), cs = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({n, c_total, x.dim(2), x.dim(3)});
  const auto xi = x.data();
  auto o = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(xi.begin() + i * cs * hw, xi.begin() + (i + 1) * cs * hw,
              o.begin() + (i * c_total + c0) * hw);
  }
  attach_node(out, "channel_pad", {x}, [c0, cs](const Tensor& g) {
    return std::vector<Tensor>{slice_channels(g, c0, c0 + cs)};
  });
  return out;
}

}  // namespace

// ---- matmul / bmm ----

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_ndim(a, 2, "matmul");
  require_ndim(b, 2, "matmul");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t k = trans_a ? a.dim(0) : a.dim(1);
  const int64_t k2 = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dims disagree, " + a.shape_str() +
                     (trans_a ? "^T" : "") + " x " + b.shape_str() + (trans_b ? "^T" : ""));
  }
  Tensor out = Tensor::zeros({m, n});
  CMat am(a.data().data(), a.dim(0), a.dim(1));
  CMat bm(b.data().data(), b.dim(0), b.dim(1));
  MMat om(out.mutable_data().data(), m, n);
  if (!trans_a && !trans_b)
    om.noalias() = am * bm;
  else if (!trans_a && trans_b)
    om.noalias() = am * bm.transpose();
  else if (trans_a && !trans_b)
    om.noalias() = am.transpose() * bm;
  else
    om.noalias() = am.transpose() * bm.transpose();
  attach_node(out, "matmul", {a, b}, [a, b, trans_a, trans_b](const Tensor& g) {
    Tensor da, db;
    if (a.requires_grad()) {
      da = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
    }
    if (b.requires_grad()) {
      db = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
    }
    return std::vector<Tensor>{da, db};
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_ndim(a, 3, "bmm");
  require_ndim(b, 3, "bmm");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: batch dims disagree, " + a.shape_str() + " vs " + b.shape_str());
  }
  const int64_t bs = a.dim(0);
  const int64_t m = trans_a ? a.dim(2) : a.dim(1);
  const int64_t k = trans_a ? a.dim(1) : a.dim(2);
  const int64_t k2 = trans_b ? b.dim(2) : b.dim(1);
  const int64_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != k2) {
    throw ShapeError("bmm: inner dims disagree, " + a.shape_str() + " x " + b.shape_str());
  }
  Tensor out = Tensor::zeros({bs, m, n});
  const auto ai = a.data();
  const auto bi = b.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < bs; ++i) {
    CMat am(ai.data() + i * a.dim(1) * a.dim(2), a.dim(1), a.dim(2));
    CMat bm(bi.data() + i * b.dim(1) * b.dim(2), b.dim(1), b.dim(2));
    MMat om(o.data() + i * m * n, m, n);
    if (!trans_a && !trans_b)
      om.noalias() = am * bm;
    else if (!trans_a && trans_b)
      om.noalias() = am * bm.transpose();
    else if (trans_a && !trans_b)
      om.noalias() = am.transpose() * bm;
    else
      om.noalias() = am.transpose() * bm.transpose();
  }
  attach_node(out, "bmm", {a, b}, [a, b, trans_a, trans_b](const Tensor& g) {
    Tensor da, db;
    if (a.requires_grad()) {
      da = trans_a ? bmm(b, g, trans_b, true) : bmm(g, b, false, !trans_b);
    }
    if (b.requires_grad()) {
      db = trans_b ? bmm(g, a, true, trans_a) : bmm(a, g, !trans_a, false);
    }
    return std::vector<Tensor>{da, db};
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_ndim(x, 2, "linear");
  require_ndim(w, 2, "linear");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + x.shape_str() + " and weight " + w.shape_str() +
                     " have different inner dims");
  }
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(0))) {
    throw ShapeError("linear: bias " + b.shape_str() + " does not match weight " + w.shape_str());
  }
  Tensor y = matmul(x, w, false, true);
  return b.defined() ? col_badd(y, b) : y;
}

// ---- softmax ----

Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("softmax_lastdim: need >= 2-d tensor");
  const int64_t m = x.shape().back();
  const int64_t rows = x.numel() / m;
  Tensor out = Tensor::zeros(x.shape());
  const auto xi = x.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (rows * m > 65536)
  for (int64_t r = 0; r < rows; ++r) {
    const real* p = xi.data() + r * m;
    real* q = o.data() + r * m;
    real mx = p[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, p[j]);
    real z = 0;
    for (int64_t j = 0; j < m; ++j) {
      q[j] = std::exp(p[j] - mx);
      z += q[j];
    }
    const real inv = real(1) / z;
    for (int64_t j = 0; j < m; ++j) q[j] *= inv;
  }
  attach_node(out, "softmax_lastdim", {x}, [x, m](const Tensor& g) {
    Tensor y = softmax_lastdim(x);
    Tensor s = lastdim_sum(mul(g, y));
    return std::vector<Tensor>{mul(y, sub(g, lastdim_expand(s, m)))};
  });
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_ndim(logits, 2, "softmax_cross_entropy");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(lab) +
                      " outside [0," + std::to_string(k) + ")");
    }
  }
  Tensor probs = Tensor::zeros(logits.shape());  // saved for the backward pass
  const auto xi = logits.data();
  auto pi = probs.mutable_data();
  real loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const real* p = xi.data() + i * k;
    real* q = pi.data() + i * k;
    real mx = p[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, p[j]);
    real z = 0;
    for (int64_t j = 0; j < k; ++j) {
      q[j] = std::exp(p[j] - mx);
      z += q[j];
    }
    const real inv = real(1) / z;
    for (int64_t j = 0; j < k; ++j) q[j] *= inv;
    loss += std::log(z) + mx - p[labels[i]];
  }
  Tensor out = Tensor::scalar(loss / real(n));
  attach_node(out, "softmax_cross_entropy", {logits}, [probs, labels, n, k](const Tensor& g) {
    Tensor coeff = probs.detach();
    auto c = coeff.mutable_data();
    const real invn = real(1) / real(n);
    for (int64_t i = 0; i < n; ++i) {
      c[i * k + labels[i]] -= real(1);
    }
    for (auto& v : c) v *= invn;
    return std::vector<Tensor>{mul(expand_scalar(g, coeff.shape()), coeff)};
  });
  return out;
}

// ---- norms ----

Tensor l2_normalize(const Tensor& x, real eps) {
  require_ndim(x, 2, "l2_normalize");
  // norm = sqrt(||x||^2 + eps^2) keeps the backward finite at x = 0; the
  // forward deviation is O(eps^2 / ||x||), far below test tolerances.
  Tensor n2 = lastdim_sum(square(x));
  Tensor norm = sqrt_op(add_scalar(n2, eps * eps));
  Tensor inv = reciprocal(add_scalar(norm, eps));
  return lastdim_bmul(x, inv);
}

// ---- utilities ----

Tensor detach(const Tensor& x) { return x.detach(); }

void clamp_(Tensor& x, real lo, real hi) {
  for (auto& v : x.mutable_data()) v = std::min(hi, std::max(lo, v));
}

bool all_finite(const Tensor& x) {
  for (real v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace smoothswap::ops
