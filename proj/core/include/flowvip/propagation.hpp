#pragma once

#include <random>
#include <string>

#include "flowvip/nn.hpp"

namespace flowvip::propagation {

/// One direction of flow-guided deformable propagation.
class PropagationCell {
 public:
  PropagationCell() = default;
  PropagationCell(int channels, int kernel, int groups, std::mt19937_64& rng);

  /// Aligns the already-propagated neighbour feature [h, w, C] to the current
  /// frame. Without DCN the result is the plain flow warp.
  Tensor align(const Tensor& current, const Tensor& neighbour, const Tensor& flow, bool use_dcn) const;
  /// P: concat(current, aligned) -> C channels.
  Tensor merge(const Tensor& current, const Tensor& aligned) const;
  Tensor step(const Tensor& current, const Tensor& neighbour, const Tensor& flow, bool use_dcn) const {
    return merge(current, align(current, neighbour, flow, use_dcn));
  }

  void collect(const std::string& prefix, nn::ParameterList& out) const;

  int channels() const { return channels_; }
  int kernel() const { return kernel_; }
  int groups() const { return groups_; }

  nn::Conv2d offset1, offset2, offset3;  // C_b / C_f stack
  nn::Conv2d merge1, merge2;             // P_b / P_f
  Tensor deform_weight;                  // [K, K, C, C]
  Tensor deform_bias;                    // [C]

 private:
  int channels_ = 0, kernel_ = 3, groups_ = 1;
};

/// Running min/max of post-sigmoid mask values seen by align() on this
/// thread since the last reset.
struct MaskRange {
  Scalar min = 1;
  Scalar max = 0;
  int64_t count = 0;
};
MaskRange observed_mask_range();
void reset_observed_mask_range();

/// features: [T, h, w, C]; flows_fwd: [T-1, h, w, 2] with flows_fwd[t] = F(t -> t+1)
/// (undefined allowed when T == 1). Recurrence runs from the last frame down.
Tensor propagate_backward(const Tensor& features, const Tensor& flows_fwd, const PropagationCell& cell,
                          bool use_dcn = true);

/// Mirror of propagate_backward; flows_bwd[t] = F(t+1 -> t).
Tensor propagate_forward(const Tensor& features, const Tensor& flows_bwd, const PropagationCell& cell,
                         bool use_dcn = true);

/// 1x1 convolution over concat(fwd, bwd).
class Fusion {
 public:
  Fusion() = default;
  Fusion(int channels, std::mt19937_64& rng);

  Tensor operator()(const Tensor& fwd, const Tensor& bwd) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const { conv.collect(prefix, out); }

  nn::Conv2d conv;  // weight [1, 1, 2C, C]
};

}  // namespace flowvip::propagation
