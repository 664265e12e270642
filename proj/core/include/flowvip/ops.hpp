#pragma once

#include <array>
#include <vector>

#include "flowvip/tensor.hpp"

namespace flowvip {

// Elementwise arithmetic with NumPy-style broadcasting (shapes aligned at the
// trailing dimension; extents must match or be 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, Scalar b);
Tensor mul(const Tensor& a, Scalar b);
Tensor rsub(Scalar a, const Tensor& b);  // a - b

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, Scalar b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, Scalar b) { return mul(a, b); }
inline Tensor operator*(Scalar a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(Scalar a, const Tensor& b) { return rsub(a, b); }

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
/// Subgradient at 0 is 0.
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Scalar slope = Scalar(0.2));
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t length);
/// Gathers slices along axis 0; indices may repeat.
Tensor index_select(const Tensor& a, const std::vector<int64_t>& indices);
/// Stacks equal-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Splits along axis 0 into unit slices with the leading axis dropped.
std::vector<Tensor> unstack(const Tensor& a);

/// a[..., m, k] x b[..., k, n]. Batch extents must agree, or b may be a
/// plain matrix shared across the batch. With transpose_b, b is [..., n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv3dGeometry {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};
};

/// Channels-last volumetric convolution with zero padding.
/// x: [D, H, W, Cin], weight: [kd, kh, kw, Cin, Cout], bias: [Cout] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dGeometry& geo);

/// Per-image 2D convolution. x: [N, H, W, Cin], weight: [kh, kw, Cin, Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// x: [N, H, W, C] -> [N, H/f, W/f, C], mean over each f x f block.
Tensor avg_pool(const Tensor& x, int factor);
/// x: [N, H, W, C] -> [N, 2H, 2W, C].
Tensor upsample_nearest2x(const Tensor& x);
/// Half-pixel-centred bilinear x2 enlargement with edge clamping.
Tensor upsample_bilinear2x(const Tensor& x);

/// Softmax over the last axis (row max subtracted first).
Tensor softmax(const Tensor& x);

/// Normalises over the last axis then applies gamma/beta (each [C]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = Scalar(1e-10));

}  // namespace flowvip
