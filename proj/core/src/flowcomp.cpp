#include "flowvip/flowcomp.hpp"

#include <algorithm>
#include <cmath>

#include "flowvip/errors.hpp"
#include "flowvip/geom.hpp"

namespace flowvip::flowcomp {

Tensor downsample_quarter(const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(1) % 4 != 0 || frames.dim(2) % 4 != 0) {
    throw ShapeError("downsample_quarter: frame extents of " + shape_str(frames.shape()) + " not divisible by 4");
  }
  return avg_pool(frames, 4);
}

BidirectionalFlows BidirectionalFlows::detach() const {
  BidirectionalFlows out;
  if (forward.defined()) out.forward = forward.detach();
  if (backward.defined()) out.backward = backward.detach();
  return out;
}

FlowPyramidNet::FlowPyramidNet(int in_channels, int levels, int hidden, std::mt19937_64& rng) {
  if (levels < 1) throw ConfigError("flow pyramid needs at least one level");
  const int in = 2 * in_channels + 2;
  for (int l = 0; l < levels; ++l) {
    std::vector<nn::Conv2d> stack;
    stack.emplace_back(in, hidden, 7, 1, 3, rng);
    stack.emplace_back(hidden, hidden, 3, 1, 1, rng);
    stack.emplace_back(hidden, hidden, 3, 1, 1, rng);
    stack.emplace_back(hidden, hidden / 2, 3, 1, 1, rng);
    stack.emplace_back(hidden / 2, 2, 3, 1, 1, rng);
    stack.back().zero_init();
    stacks_.push_back(std::move(stack));
  }
}

Tensor FlowPyramidNet::operator()(const Tensor& first, const Tensor& second) const {
  if (first.shape() != second.shape() || first.rank() != 4) {
    throw ShapeError("flow net: frame batches " + shape_str(first.shape()) + " and " + shape_str(second.shape()) +
                     " differ");
  }
  const int L = levels();
  const int64_t scale = int64_t{1} << (L - 1);
  if (first.dim(1) % scale != 0 || first.dim(2) % scale != 0) {
    throw ShapeError("flow net: extents of " + shape_str(first.shape()) + " not divisible by " +
                     std::to_string(scale));
  }
  std::vector<Tensor> a{first}, b{second};
  for (int l = 1; l < L; ++l) {
    a.push_back(avg_pool(a.back(), 2));
    b.push_back(avg_pool(b.back(), 2));
  }
  Tensor flow;
  for (int l = L - 1; l >= 0; --l) {
    if (!flow.defined()) {
      Shape s = a[l].shape();
      s.back() = 2;
      flow = Tensor::zeros(s);
    } else {
      flow = upsample_bilinear2x(flow) * Scalar(2);
    }
    Tensor x = concat({a[l], geom::bilinear_warp(b[l], flow), flow}, 3);
    const auto& stack = stacks_[l];
    for (size_t i = 0; i + 1 < stack.size(); ++i) x = relu(stack[i](x));
    flow = flow + stack.back()(x);
  }
  return flow;
}

void FlowPyramidNet::collect(const std::string& prefix, nn::ParameterList& out) const {
  for (size_t l = 0; l < stacks_.size(); ++l)
    for (size_t i = 0; i < stacks_[l].size(); ++i)
      stacks_[l][i].collect(prefix + ".level" + std::to_string(l) + ".conv" + std::to_string(i), out);
}

Tensor standardize_colour(const Tensor& frames) {
  const int64_t c = frames.dim(3);
  const Tensor rgb = narrow(frames, 3, 0, std::min<int64_t>(3, c));
  const Tensor centred = rgb - mean(rgb);
  const Tensor out = centred / sqrt(mean(centred * centred) + Scalar(1e-6));
  return c > 3 ? concat({out, narrow(frames, 3, 3, c - 3)}, 3) : out;
}

BidirectionalFlows estimate_bidirectional(const Tensor& frames_small, const FlowPyramidNet& net) {
  if (frames_small.rank() != 4) {
    throw ShapeError("estimate_bidirectional: expected [T,h,w,c], got " + shape_str(frames_small.shape()));
  }
  const int64_t T = frames_small.dim(0);
  BidirectionalFlows out;
  if (T < 2) return out;
  const Tensor x = standardize_colour(frames_small);
  const Tensor head = narrow(x, 0, 0, T - 1);
  const Tensor tail = narrow(x, 0, 1, T - 1);
  // Both directions share one batched pass: rows [0, T-1) are t -> t+1.
  const Tensor flows = net(concat({head, tail}, 0), concat({tail, head}, 0));
  out.forward = narrow(flows, 0, 0, T - 1);
  out.backward = narrow(flows, 0, T - 1, T - 1);
  return out;
}

Tensor flow_loss(const BidirectionalFlows& pred, const BidirectionalFlows& gt) {
  if (pred.count() != gt.count()) {
    throw ShapeError("flow_loss: " + std::to_string(pred.count()) + " predicted pairs vs " +
                     std::to_string(gt.count()) + " ground-truth pairs");
  }
  if (pred.count() == 0) return Tensor::scalar(0);
  if (pred.forward.shape() != gt.forward.shape() || pred.backward.shape() != gt.backward.shape()) {
    throw ShapeError("flow_loss: predicted " + shape_str(pred.forward.shape()) + " vs ground truth " +
                     shape_str(gt.forward.shape()));
  }
  return mean(abs(pred.forward - gt.forward)) + mean(abs(pred.backward - gt.backward));
}

Scalar endpoint_error(const BidirectionalFlows& pred, const BidirectionalFlows& gt) {
  if (pred.count() != gt.count()) throw ShapeError("endpoint_error: pair counts differ");
  if (pred.count() == 0) return 0;
  Scalar total = 0;
  int64_t n = 0;
  for (int d = 0; d < 2; ++d) {
    const Tensor& p = d == 0 ? pred.forward : pred.backward;
    const Tensor& g = d == 0 ? gt.forward : gt.backward;
    if (p.shape() != g.shape()) throw ShapeError("endpoint_error: flow shapes differ");
    auto pv = p.data();
    auto gv = g.data();
    for (size_t i = 0; i < pv.size(); i += 2) {
      total += std::hypot(pv[i] - gv[i], pv[i + 1] - gv[i + 1]);
      ++n;
    }
  }
  return total / static_cast<Scalar>(n);
}

}  // namespace flowvip::flowcomp
