#pragma once

#include <random>
#include <string>
#include <vector>

#include "flowvip/nn.hpp"

namespace flowvip::flowcomp {

/// Area-mean 4x4 reduction of a [T, H, W, C] stack.
Tensor downsample_quarter(const Tensor& frames);

/// Flows between consecutive local frames at feature resolution.
/// forward[t] is F(t -> t+1), backward[t] is F(t+1 -> t); each is
/// [T-1, h, w, 2], undefined when there are fewer than two frames.
struct BidirectionalFlows {
  Tensor forward;
  Tensor backward;

  int64_t count() const { return forward.defined() ? forward.dim(0) : 0; }
  BidirectionalFlows detach() const;
};

/// Coarse-to-fine residual flow estimator. For a pair (a, b) it predicts
/// the flow f with warp(b, f) ~ a.
class FlowPyramidNet {
 public:
  FlowPyramidNet() = default;
  FlowPyramidNet(int in_channels, int levels, int hidden, std::mt19937_64& rng);

  /// first, second: [N, h, w, c]; h and w divisible by 2^(levels-1).
  Tensor operator()(const Tensor& first, const Tensor& second) const;

  void collect(const std::string& prefix, nn::ParameterList& out) const;
  int levels() const { return static_cast<int>(stacks_.size()); }

 private:
  // stacks_[l] runs at resolution (h / 2^l, w / 2^l).
  std::vector<std::vector<nn::Conv2d>> stacks_;
};

/// Colour channels (first three) shifted and scaled to zero mean, unit
/// variance over the whole clip; any further channels pass through.
Tensor standardize_colour(const Tensor& frames);

/// All forward and backward flows of a local window in one batched pass,
/// on colour-standardised input.
BidirectionalFlows estimate_bidirectional(const Tensor& frames_small, const FlowPyramidNet& net);

/// Element-mean L1 per direction, summed over the two directions.
Tensor flow_loss(const BidirectionalFlows& pred, const BidirectionalFlows& gt);

/// Mean endpoint error over both directions (no gradient).
Scalar endpoint_error(const BidirectionalFlows& pred, const BidirectionalFlows& gt);

}  // namespace flowvip::flowcomp
