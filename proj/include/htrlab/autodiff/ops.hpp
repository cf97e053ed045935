#pragma once

#include <cstdint>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::ad {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }

Tensor exp(const Tensor& x);
/// Throws NumericDomain on non-positive input.
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
/// x^p; NumericDomain for negative x with non-integer p.
Tensor pow(const Tensor& x, double p);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

/// [M,K]x[K,N], [B,M,K]x[B,K,N], and mixed 2D/3D with the 2D side
/// broadcast across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int a, int b);
/// Broadcast to `shape` (size-1 axes and missing leading axes expand).
Tensor expand(const Tensor& x, const Shape& shape);
/// Adjoint of expand: sums broadcast axes away.
Tensor sum_to(const Tensor& x, const Shape& shape);

Tensor concat(const std::vector<Tensor>& xs, int axis);
/// Elements [start, end) along `axis`.
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end);
/// Adjoint of slice: places x at [start, start+len) of a zero tensor whose
/// `axis` has size `full`.
Tensor pad_slice(const Tensor& x, int axis, std::int64_t start, std::int64_t full);

/// Rows of x (axis 0) picked by ids; embedding lookup.
Tensor index_select(const Tensor& x, const std::vector<std::int64_t>& ids);
/// Adjoint of index_select: accumulates rows into a [rows, ...] zero tensor.
Tensor index_add(const Tensor& x, const std::vector<std::int64_t>& ids, std::int64_t rows);

/// Flat gather: out[i] = x[idx[i]].
Tensor gather_flat(const Tensor& x, const std::vector<std::int64_t>& idx, Shape out_shape);
/// Adjoint of gather_flat.
Tensor scatter_flat(const Tensor& x, const std::vector<std::int64_t>& idx, Shape out_shape);

struct Conv2dGeometry {
  std::int64_t kernel_h = 3, kernel_w = 3;
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_h = 0, pad_w = 0;
};

/// [N,C,H,W] -> [N, C*kh*kw, Ho*Wo] patch matrix (zero padding).
Tensor im2col(const Tensor& x, const Conv2dGeometry& g);
/// Adjoint of im2col.
Tensor col2im(const Tensor& cols, const Shape& image_shape, const Conv2dGeometry& g);
/// x [N,C,H,W], w [O,C,kh,kw] -> [N,O,Ho,Wo].
Tensor conv2d(const Tensor& x, const Tensor& w, std::int64_t stride = 1, std::int64_t pad = 0);
/// Max pooling over [N,C,H,W]; kernel equals stride, trailing remainder dropped.
Tensor max_pool2d(const Tensor& x, std::int64_t kh, std::int64_t kw);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

/// Inverted dropout with a Bernoulli keep-mask drawn from `rng`; identity
/// when not training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);
/// Dropout with a caller-supplied mask (already scaled), for replay and tests.
Tensor dropout_with_mask(const Tensor& x, const Tensor& mask);

}  // namespace htrlab::ad
