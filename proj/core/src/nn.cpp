#include "flowvip/nn.hpp"

#include <cmath>

namespace flowvip::nn {

Tensor parameter(Tensor init) {
  Tensor p = init.detach();
  p.set_requires_grad(true);
  return p;
}

Tensor he_uniform(const Shape& shape, int64_t fan_in, std::mt19937_64& rng, Scalar slope) {
  const Scalar bound = std::sqrt(Scalar(6) / ((1 + slope * slope) * static_cast<Scalar>(fan_in)));
  return Tensor::uniform(shape, rng, -bound, bound);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int padding_, std::mt19937_64& rng)
    : stride(stride_), padding(padding_) {
  weight = parameter(he_uniform({kernel, kernel, in_channels, out_channels},
                                static_cast<int64_t>(kernel) * kernel * in_channels, rng));
  bias = parameter(Tensor::zeros({out_channels}));
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

void Conv2d::zero_init() {
  for (Scalar& v : weight.mutable_data()) v = 0;
  for (Scalar& v : bias.mutable_data()) v = 0;
}

Conv3d::Conv3d(int in_channels, int out_channels, std::array<int, 3> kernel, Conv3dGeometry geometry_,
               std::mt19937_64& rng)
    : geometry(geometry_) {
  const int64_t fan_in = static_cast<int64_t>(kernel[0]) * kernel[1] * kernel[2] * in_channels;
  weight = parameter(he_uniform({kernel[0], kernel[1], kernel[2], in_channels, out_channels}, fan_in, rng));
  bias = parameter(Tensor::zeros({out_channels}));
}

Tensor Conv3d::operator()(const Tensor& x) const { return conv3d(x, weight, bias, geometry); }

void Conv3d::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng, bool with_bias, Scalar init_std) {
  weight = parameter(Tensor::randn({in_features, out_features}, rng, init_std));
  if (with_bias) bias = parameter(Tensor::zeros({out_features}));
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

void Linear::zero_init() {
  for (Scalar& v : weight.mutable_data()) v = 0;
  if (bias.defined())
    for (Scalar& v : bias.mutable_data()) v = 0;
}

LayerNorm::LayerNorm(int features)
    : gamma(parameter(Tensor::ones({features}))), beta(parameter(Tensor::zeros({features}))) {}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void set_requires_grad(const ParameterList& params, bool flag) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
  }
}

int64_t count_elements(const ParameterList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace flowvip::nn
