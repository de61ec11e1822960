#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "smoothswap/ops.hpp"

namespace smoothswap::ops {

namespace {

using CMat = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MMat = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvDims {
  int64_t n, cin, h, w;        // input
  int64_t cout, kh, kw;        // kernel
  int64_t ho, wo;              // output
  int stride, pad;
};

int64_t out_extent(int64_t in, int64_t k, int stride, int pad, const char* op) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw ShapeError(std::string(op) + ": extent " + std::to_string(in) + " with kernel " +
                     std::to_string(k) + ", stride " + std::to_string(stride) + ", pad " +
                     std::to_string(pad) + " gives non-integral output size");
  }
  return span / stride + 1;
}

// Column layout: col[(ci*kh + p)*kw + q][oy*wo + ox] = x[ci][iy][ix]
// with iy = oy*stride - pad + p, ix = ox*stride - pad + q (0 outside).
void im2col(const real* x, const ConvDims& d, real* col) {
  const int64_t owo = d.ho * d.wo;
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    const real* xc = x + ci * d.h * d.w;
    for (int64_t p = 0; p < d.kh; ++p) {
      for (int64_t q = 0; q < d.kw; ++q) {
        real* row = col + ((ci * d.kh + p) * d.kw + q) * owo;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + p;
          real* dst = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.wo, real(0));
            continue;
          }
          const real* src = xc + iy * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + q;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : real(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the column matrix back onto the image.
void col2im_acc(const real* col, const ConvDims& d, real* x) {
  const int64_t owo = d.ho * d.wo;
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    real* xc = x + ci * d.h * d.w;
    for (int64_t p = 0; p < d.kh; ++p) {
      for (int64_t q = 0; q < d.kw; ++q) {
        const real* row = col + ((ci * d.kh + p) * d.kw + q) * owo;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + p;
          if (iy < 0 || iy >= d.h) continue;
          real* dst = xc + iy * d.w;
          const real* src = row + oy * d.wo;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + q;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

ConvDims conv_dims(const Tensor& x, int64_t cout, int64_t cin_w, int64_t kh, int64_t kw,
                   int stride, int pad, const char* op) {
  if (x.ndim() != 4) {
    throw ShapeError(std::string(op) + ": input must be [N,C,H,W], got " + x.shape_str());
  }
  if (x.dim(1) != cin_w) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(1)) +
                     " channels but weight expects " + std::to_string(cin_w) + " (input " +
                     x.shape_str() + ")");
  }
  if (stride < 1 || pad < 0 || kh < 1 || kw < 1) {
    throw ConfigError(std::string(op) + ": stride must be >= 1, padding >= 0, kernel >= 1");
  }
  ConvDims d;
  d.n = x.dim(0);
  d.cin = cin_w;
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = cout;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.ho = out_extent(d.h, kh, stride, pad, op);
  d.wo = out_extent(d.w, kw, stride, pad, op);
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, int stride,
              int padding) {
  if (w.ndim() != 4) {
    throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " + w.shape_str());
  }
  const ConvDims d = conv_dims(x, w.dim(0), w.dim(1), w.dim(2), w.dim(3), stride, padding,
                               "conv2d");
  if (bias && (bias->ndim() != 1 || bias->dim(0) != d.cout)) {
    throw ShapeError("conv2d: bias " + bias->shape_str() + " does not match weight " +
                     w.shape_str());
  }
  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});
  const int64_t ck = d.cin * d.kh * d.kw;
  const int64_t owo = d.ho * d.wo;
  const auto xi = x.data();
  auto o = out.mutable_data();
  CMat wm(w.data().data(), d.cout, ck);
  const real* bptr = bias ? bias->data().data() : nullptr;
#pragma omp parallel
  {
    std::vector<real> col(static_cast<size_t>(ck * owo));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < d.n; ++i) {
      im2col(xi.data() + i * d.cin * d.h * d.w, d, col.data());
      CMat cm(col.data(), ck, owo);
      MMat om(o.data() + i * d.cout * owo, d.cout, owo);
      om.noalias() = wm * cm;
      if (bptr) {
        for (int64_t co = 0; co < d.cout; ++co) om.row(co).array() += bptr[co];
      }
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  const int64_t h_in = d.h, w_in = d.w, kh = d.kh, kw = d.kw;
  attach_node(out, "conv2d", std::move(inputs),
              [x, w, has_bias, stride, padding, h_in, w_in, kh, kw](const Tensor& g) {
                std::vector<Tensor> grads;
                grads.push_back(x.requires_grad()
                                    ? conv2d_dinput(g, w, stride, padding, h_in, w_in)
                                    : Tensor());
                grads.push_back(w.requires_grad()
                                    ? conv2d_dweight(x, g, stride, padding, kh, kw)
                                    : Tensor());
                if (has_bias) grads.push_back(chan_sum(g));
                return grads;
              });
  return out;
}

Tensor conv2d_dinput(const Tensor& gy, const Tensor& w, int stride, int padding, int64_t h_in,
                     int64_t w_in) {
  if (gy.ndim() != 4 || w.ndim() != 4 || gy.dim(1) != w.dim(0)) {
    throw ShapeError("conv2d_dinput: grad " + gy.shape_str() + " and weight " + w.shape_str() +
                     " are inconsistent");
  }
  ConvDims d;
  d.n = gy.dim(0);
  d.cin = w.dim(1);
  d.h = h_in;
  d.w = w_in;
  d.cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = padding;
  d.ho = gy.dim(2);
  d.wo = gy.dim(3);
  if (out_extent(h_in, d.kh, stride, padding, "conv2d_dinput") != d.ho ||
      out_extent(w_in, d.kw, stride, padding, "conv2d_dinput") != d.wo) {
    throw ShapeError("conv2d_dinput: grad spatial dims do not match the forward geometry");
  }
  Tensor out = Tensor::zeros({d.n, d.cin, d.h, d.w});
  const int64_t ck = d.cin * d.kh * d.kw;
  const int64_t owo = d.ho * d.wo;
  const auto gi = gy.data();
  auto o = out.mutable_data();
  CMat wm(w.data().data(), d.cout, ck);
#pragma omp parallel
  {
    std::vector<real> col(static_cast<size_t>(ck * owo));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < d.n; ++i) {
      CMat gm(gi.data() + i * d.cout * owo, d.cout, owo);
      MMat cm(col.data(), ck, owo);
      cm.noalias() = wm.transpose() * gm;
      col2im_acc(col.data(), d, o.data() + i * d.cin * d.h * d.w);
    }
  }
  attach_node(out, "conv2d_dinput", {gy, w}, [gy, w, stride, padding](const Tensor& u) {
    Tensor dgy, dw;
    if (gy.requires_grad()) dgy = conv2d(u, w, std::nullopt, stride, padding);
    if (w.requires_grad()) dw = conv2d_dweight(u, gy, stride, padding, w.dim(2), w.dim(3));
    return std::vector<Tensor>{dgy, dw};
  });
  return out;
}

Tensor conv2d_dweight(const Tensor& x, const Tensor& gy, int stride, int padding, int64_t kh,
                      int64_t kw) {
  if (x.ndim() != 4 || gy.ndim() != 4 || x.dim(0) != gy.dim(0)) {
    throw ShapeError("conv2d_dweight: input " + x.shape_str() + " and grad " + gy.shape_str() +
                     " are inconsistent");
  }
  const ConvDims d = conv_dims(x, gy.dim(1), x.dim(1), kh, kw, stride, padding, "conv2d_dweight");
  if (d.ho != gy.dim(2) || d.wo != gy.dim(3)) {
    throw ShapeError("conv2d_dweight: grad spatial dims " + gy.shape_str() +
                     " do not match geometry");
  }
  Tensor out = Tensor::zeros({d.cout, d.cin, kh, kw});
  const int64_t ck = d.cin * kh * kw;
  const int64_t owo = d.ho * d.wo;
  const auto xi = x.data();
  const auto gi = gy.data();
  auto o = out.mutable_data();
  // Sequential accumulation over the batch keeps the sum order fixed, so
  // results are identical for any thread count.
  std::vector<real> col(static_cast<size_t>(ck * owo));
  MMat om(o.data(), d.cout, ck);
  for (int64_t i = 0; i < d.n; ++i) {
    im2col(xi.data() + i * d.cin * d.h * d.w, d, col.data());
    CMat cm(col.data(), ck, owo);
    CMat gm(gi.data() + i * d.cout * owo, d.cout, owo);
    om.noalias() += gm * cm.transpose();
  }
  attach_node(out, "conv2d_dweight", {x, gy}, [x, gy, stride, padding](const Tensor& u) {
    Tensor dx, dgy;
    if (x.requires_grad()) {
      dx = conv2d_dinput(gy, u, stride, padding, x.dim(2), x.dim(3));
    }
    if (gy.requires_grad()) dgy = conv2d(x, u, std::nullopt, stride, padding);
    return std::vector<Tensor>{dx, dgy};
  });
  return out;
}

// ---- resampling ----

Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("avg_pool2: need [N,C,2h,2w], got " + x.shape_str());
  }
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h / 2, wo = w / 2;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  const auto xi = x.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (n * c > 8)
  for (int64_t r = 0; r < n * c; ++r) {
    const real* p = xi.data() + r * h * w;
    real* q = o.data() + r * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        const real* p00 = p + (2 * oy) * w + 2 * ox;
        q[oy * wo + ox] = (p00[0] + p00[1] + p00[w] + p00[w + 1]) * real(0.25);
      }
    }
  }
  attach_node(out, "avg_pool2", {x}, [](const Tensor& g) {
    return std::vector<Tensor>{scale(upsample_nearest2(g), real(0.25))};
  });
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("upsample_nearest2: need [N,C,H,W], got " + x.shape_str());
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
  const auto xi = x.data();
  auto o = out.mutable_data();
#pragma omp parallel for schedule(static) if (n * c > 8)
  for (int64_t r = 0; r < n * c; ++r) {
    const real* p = xi.data() + r * h * w;
    real* q = o.data() + r * 4 * h * w;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t xcol = 0; xcol < w; ++xcol) {
        const real v = p[y * w + xcol];
        real* q0 = q + (2 * y) * 2 * w + 2 * xcol;
        q0[0] = v;
        q0[1] = v;
        q0[2 * w] = v;
        q0[2 * w + 1] = v;
      }
    }
  }
  attach_node(out, "upsample_nearest2", {x}, [](const Tensor& g) {
    return std::vector<Tensor>{scale(avg_pool2(g), real(4))};
  });
  return out;
}

}  // namespace smoothswap::ops
