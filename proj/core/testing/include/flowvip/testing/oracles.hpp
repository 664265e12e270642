#pragma once

// Deliberately naive scalar reference implementations. They share no code
// with the library kernels they are compared against.

#include <cstdint>
#include <random>
#include <vector>

#include "flowvip/flowcomp.hpp"
#include "flowvip/focal.hpp"
#include "flowvip/tensor.hpp"

namespace flowvip::oracle {

/// Triple loop over plain row-major matrices [m, k] x [k, n].
std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n);

/// Clamp-to-edge bilinear sample of channel c of an [h, w, C] image.
double bilinear(const Tensor& img, double y, double x, int64_t c);

/// Same-size direct convolution of [h, w, cin] with [K, K, cin, cout]; edge
/// replicated outside the image.
Tensor conv_replicate(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Zero-padded strided direct convolution, [N, H, W, cin] -> [N, Ho, Wo, cout].
Tensor conv_zero(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

/// Per-tap gather-and-sum modulated deformable convolution.
Tensor deform_gather(const Tensor& input, const Tensor& weight, const Tensor& bias, const Tensor& base_flow,
                     const Tensor& offsets, const Tensor& mask, int groups);

/// Per-pixel backward warp by scalar loops.
Tensor warp(const Tensor& src, const Tensor& flow);

/// Dense multi-head attention of every token against every token, using the
/// block's projections; returns the block's attention() output layout.
Tensor dense_attention(const Tensor& tokens, const focal::FocalBlock& block);

/// 1x1 convolution by loops over [T, h, w, cin] with weight [1, 1, cin, cout].
Tensor pointwise(const Tensor& x, const Tensor& weight, const Tensor& bias);

double psnr(const Tensor& a, const Tensor& b, int64_t frame);
/// Direct 2D Gaussian window per position, no separability.
double ssim(const Tensor& a, const Tensor& b, int64_t frame);

double flow_loss(const flowcomp::BidirectionalFlows& pred, const flowcomp::BidirectionalFlows& gt);
double l1_mean(const Tensor& a, const Tensor& b);

/// Hand-rolled bias-corrected Adam on a single scalar for `steps` steps of
/// constant gradient g; returns the final parameter.
double adam_scalar(double x0, double g, int steps, double lr, double beta1, double beta2, double eps);

/// Enumerates window starts and non-local candidates of the inference schedule.
struct WindowPlan {
  int64_t begin, end;
  std::vector<int64_t> candidates;
};
std::vector<WindowPlan> schedule(int64_t frames, int64_t window, int64_t rate);

/// Offsets whose sampling coordinates (tap + base flow + offset) all sit at
/// least `margin` away from integers, so bilinear kinks are not probed.
Tensor smooth_offsets(const Tensor& base_flow, int64_t h, int64_t w, int K, int G, std::mt19937_64& rng,
                      double margin = 0.15);
/// Flow values at least `margin` away from integers.
Tensor smooth_flow(const Shape& shape, double lo, double hi, std::mt19937_64& rng, double margin = 0.15);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace flowvip::oracle
