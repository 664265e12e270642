#include "flowvip/propagation.hpp"

#include <algorithm>

#include "flowvip/errors.hpp"
#include "flowvip/geom.hpp"

namespace flowvip::propagation {

namespace {
thread_local MaskRange g_mask_range;

void observe(const Tensor& mask) {
  for (Scalar v : mask.data()) {
    g_mask_range.min = std::min(g_mask_range.min, v);
    g_mask_range.max = std::max(g_mask_range.max, v);
  }
  g_mask_range.count += mask.numel();
}

// Single-frame [h, w, c] <-> batched [1, h, w, c] views for conv2d.
Tensor batch1(const Tensor& x) {
  Shape s = x.shape();
  s.insert(s.begin(), 1);
  return reshape(x, s);
}

Tensor unbatch(const Tensor& x) {
  Shape s = x.shape();
  s.erase(s.begin());
  return reshape(x, s);
}
}  // namespace

MaskRange observed_mask_range() { return g_mask_range; }
void reset_observed_mask_range() { g_mask_range = MaskRange{}; }

PropagationCell::PropagationCell(int channels, int kernel, int groups, std::mt19937_64& rng)
    : channels_(channels), kernel_(kernel), groups_(groups) {
  if (kernel % 2 == 0) throw ConfigError("deformable kernel size must be odd, got " + std::to_string(kernel));
  if (groups < 1 || channels % groups != 0) {
    throw ConfigError("channels " + std::to_string(channels) + " not divisible by " + std::to_string(groups) +
                      " deformable groups");
  }
  const int taps = kernel * kernel * groups;
  offset1 = nn::Conv2d(2 * channels + 2, channels, 3, 1, 1, rng);
  offset2 = nn::Conv2d(channels, channels, 3, 1, 1, rng);
  offset3 = nn::Conv2d(channels, 3 * taps, 3, 1, 1, rng);
  offset3.zero_init();
  merge1 = nn::Conv2d(2 * channels, channels, 3, 1, 1, rng);
  merge2 = nn::Conv2d(channels, channels, 3, 1, 1, rng);
  deform_weight = nn::parameter(
      nn::he_uniform({kernel, kernel, channels, channels}, static_cast<int64_t>(kernel) * kernel * channels, rng));
  deform_bias = nn::parameter(Tensor::zeros({channels}));
}

Tensor PropagationCell::align(const Tensor& current, const Tensor& neighbour, const Tensor& flow, bool use_dcn) const {
  const Tensor warped = geom::bilinear_warp(neighbour, flow);
  if (!use_dcn) return warped;
  const int taps = kernel_ * kernel_ * groups_;
  Tensor x = concat({batch1(current), batch1(warped), batch1(flow)}, 3);
  x = leaky_relu(offset1(x));
  x = leaky_relu(offset2(x));
  const Tensor params = unbatch(offset3(x));
  const Tensor offsets = narrow(params, 2, 0, 2 * taps);
  const Tensor mask = sigmoid(narrow(params, 2, 2 * taps, taps));
  observe(mask);
  return geom::mod_deform_conv_masked(neighbour, deform_weight, deform_bias, flow, offsets, mask, groups_);
}

Tensor PropagationCell::merge(const Tensor& current, const Tensor& aligned) const {
  Tensor x = concat({batch1(current), batch1(aligned)}, 3);
  return unbatch(merge2(leaky_relu(merge1(x))));
}

void PropagationCell::collect(const std::string& prefix, nn::ParameterList& out) const {
  offset1.collect(prefix + ".offset1", out);
  offset2.collect(prefix + ".offset2", out);
  offset3.collect(prefix + ".offset3", out);
  merge1.collect(prefix + ".merge1", out);
  merge2.collect(prefix + ".merge2", out);
  out.push_back({prefix + ".deform.weight", deform_weight});
  out.push_back({prefix + ".deform.bias", deform_bias});
}

namespace {

Tensor propagate(const Tensor& features, const Tensor& flows, const PropagationCell& cell, bool use_dcn,
                 bool reverse, const char* name) {
  if (features.rank() != 4 || features.dim(3) != cell.channels()) {
    throw ShapeError(std::string(name) + ": features " + shape_str(features.shape()) + " do not match a " +
                     std::to_string(cell.channels()) + "-channel cell");
  }
  const int64_t T = features.dim(0);
  const int64_t nflows = flows.defined() ? flows.dim(0) : 0;
  if (nflows != T - 1) {
    throw ShapeError(std::string(name) + ": " + std::to_string(nflows) + " flows for " + std::to_string(T) +
                     " frames");
  }
  if (T == 1) return features;
  if (flows.rank() != 4 || flows.dim(1) != features.dim(1) || flows.dim(2) != features.dim(2) || flows.dim(3) != 2) {
    throw ShapeError(std::string(name) + ": flows " + shape_str(flows.shape()) + " vs features " +
                     shape_str(features.shape()));
  }
  const std::vector<Tensor> E = unstack(features);
  const std::vector<Tensor> F = unstack(flows);
  std::vector<Tensor> out(T);
  if (reverse) {
    out[T - 1] = E[T - 1];
    for (int64_t t = T - 2; t >= 0; --t) out[t] = cell.step(E[t], out[t + 1], F[t], use_dcn);
  } else {
    out[0] = E[0];
    for (int64_t t = 1; t < T; ++t) out[t] = cell.step(E[t], out[t - 1], F[t - 1], use_dcn);
  }
  return stack(out);
}

}  // namespace

Tensor propagate_backward(const Tensor& features, const Tensor& flows_fwd, const PropagationCell& cell, bool use_dcn) {
  return propagate(features, flows_fwd, cell, use_dcn, true, "propagate_backward");
}

Tensor propagate_forward(const Tensor& features, const Tensor& flows_bwd, const PropagationCell& cell, bool use_dcn) {
  return propagate(features, flows_bwd, cell, use_dcn, false, "propagate_forward");
}

Fusion::Fusion(int channels, std::mt19937_64& rng) : conv(2 * channels, channels, 1, 1, 0, rng) {}

Tensor Fusion::operator()(const Tensor& fwd, const Tensor& bwd) const {
  if (fwd.shape() != bwd.shape()) {
    throw ShapeError("fuse: forward " + shape_str(fwd.shape()) + " vs backward " + shape_str(bwd.shape()));
  }
  return conv(concat({fwd, bwd}, fwd.rank() - 1));
}

}  // namespace flowvip::propagation
