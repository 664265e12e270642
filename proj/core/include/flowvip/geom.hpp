#pragma once

#include "flowvip/tensor.hpp"

namespace flowvip::geom {

/// Backward-sampling flow warp. Output at p is src bilinearly sampled at
/// p + flow(p), flow channel 0 = dx (columns), 1 = dy (rows). Sampling
/// coordinates are clamped to the image rectangle (edge replication).
///
/// src: [h, w, c] with flow [h, w, 2], or batched [n, h, w, c] with
/// flow [n, h, w, 2]. Differentiable in both arguments.
Tensor bilinear_warp(const Tensor& src, const Tensor& flow);

/// Modulated deformable convolution with flow-guided sampling.
///
///   out(p) = bias + sum_k m(p,g,k) * W_k * input_g(p + p_k + base_flow(p) + offset(p,g,k))
///
/// input: [h, w, c_in]; weight: [K, K, c_in, c_out] (K odd); bias: [c_out];
/// base_flow: [h, w, 2] or undefined (zero); offsets: [h, w, K*K*G*2] laid out
/// as (group, tap, {dx, dy}); mask: [h, w, K*K*G] laid out as (group, tap).
/// Channel group g of the input is [g*c_in/G, (g+1)*c_in/G). Output spatial
/// size equals the input's; out-of-image samples clamp to the edge.
Tensor mod_deform_conv_masked(const Tensor& input, const Tensor& weight, const Tensor& bias,
                              const Tensor& base_flow, const Tensor& offsets, const Tensor& mask, int groups);

/// As above with mask = sigmoid(mask_logits).
Tensor mod_deform_conv(const Tensor& input, const Tensor& weight, const Tensor& bias, const Tensor& base_flow,
                       const Tensor& offsets, const Tensor& mask_logits, int groups);

namespace testing {
/// Negative-control hook: when enabled, the deformable-conv backward pass
/// returns a deliberately wrong mask gradient.
void set_deform_backward_fault(bool enabled);
bool deform_backward_fault();
}  // namespace testing

}  // namespace flowvip::geom
