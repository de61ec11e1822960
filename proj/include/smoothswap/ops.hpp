#pragma once

#include <optional>
#include <vector>

#include "smoothswap/tensor.hpp"

namespace smoothswap::ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, real slope = real(0.2));

// ---- reductions and broadcasts ----
Tensor sum_all(const Tensor& a);                      // -> [1]
Tensor mean_all(const Tensor& a);                     // -> [1]
Tensor expand_scalar(const Tensor& s, std::vector<int64_t> shape);

// Last-dimension family: x has shape [..., M], v has the leading shape.
Tensor lastdim_sum(const Tensor& x);                  // [..., M] -> [...]
Tensor lastdim_expand(const Tensor& v, int64_t m);    // [...] -> [..., m]
Tensor lastdim_badd(const Tensor& x, const Tensor& v);
Tensor lastdim_bmul(const Tensor& x, const Tensor& v);

// Column family on [N, F] with v of shape [F].
Tensor col_sum(const Tensor& x);
Tensor col_expand(const Tensor& v, int64_t n);
Tensor col_badd(const Tensor& x, const Tensor& v);
Tensor col_bmul(const Tensor& x, const Tensor& v);

// Channel family on [N, C, H, W] with v of shape [C].
Tensor chan_sum(const Tensor& x);
Tensor chan_badd(const Tensor& x, const Tensor& v);
Tensor chan_bmul(const Tensor& x, const Tensor& v);

// Spatial family on [N, C, H, W] with v of shape [N, C].
Tensor spatial_sum(const Tensor& x);
Tensor spatial_expand(const Tensor& v, int64_t h, int64_t w);
// Broadcast-add of a [N, C] vector over [N, C, H, W] (the conditioning
// primitive of the generator blocks).
Tensor broadcast_add_nc(const Tensor& x, const Tensor& v);
Tensor spatial_mean(const Tensor& x);  // global average pool -> [N, C]

// ---- shape ----
Tensor reshape(const Tensor& x, std::vector<int64_t> shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int64_t c0, int64_t c1);

// ---- linear algebra ----
// 2-D matmul with optional transposes: op(a) @ op(b).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// Batched matmul on [B, M, K] x [B, K, N].
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x[N,Fin] @ w[Fout,Fin]^T + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- convolution family (cross-correlation, NCHW) ----
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, int stride,
              int padding);
// Adjoint of conv2d w.r.t. its input; also used as "transposed conv" when
// building gradient graphs.
Tensor conv2d_dinput(const Tensor& gy, const Tensor& w, int stride, int padding, int64_t h_in,
                     int64_t w_in);
// Adjoint of conv2d w.r.t. its weight.
Tensor conv2d_dweight(const Tensor& x, const Tensor& gy, int stride, int padding, int64_t kh,
                      int64_t kw);

// ---- resampling ----
Tensor avg_pool2(const Tensor& x);        // 2x2 mean, stride 2
Tensor upsample_nearest2(const Tensor& x);

// ---- softmax ----
Tensor softmax_lastdim(const Tensor& x);
// Mean cross-entropy of logits[N,K] against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---- norms ----
// Row-wise x / (||x|| + eps) on [N, F]. eps keeps zero vectors finite.
Tensor l2_normalize(const Tensor& x, real eps = real(1e-12));

// ---- non-graph utilities ----
Tensor detach(const Tensor& x);
void clamp_(Tensor& x, real lo, real hi);  // in-place, inference only
bool all_finite(const Tensor& x);

}  // namespace smoothswap::ops
