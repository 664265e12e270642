#pragma once

#include <random>
#include <string>
#include <vector>

#include "flowvip/ops.hpp"
#include "flowvip/tensor.hpp"

namespace flowvip::nn {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

/// Fresh trainable leaf.
Tensor parameter(Tensor init);

/// He-uniform for layers followed by LeakyReLU with the given slope.
Tensor he_uniform(const Shape& shape, int64_t fan_in, std::mt19937_64& rng, Scalar slope = Scalar(0.2));

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  void zero_init();

  Tensor weight;  // [k, k, in, out]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;
};

/// Volumetric convolution over a single clip [T, H, W, C].
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(int in_channels, int out_channels, std::array<int, 3> kernel, Conv3dGeometry geometry,
         std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor weight;  // [kt, kh, kw, in, out]
  Tensor bias;
  Conv3dGeometry geometry;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, std::mt19937_64& rng, bool with_bias = true, Scalar init_std = Scalar(0.02));

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterList& out) const;
  void zero_init();

  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int features);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor gamma;
  Tensor beta;
};

void zero_grads(const ParameterList& params);
void set_requires_grad(const ParameterList& params, bool flag);
int64_t count_elements(const ParameterList& params);

}  // namespace flowvip::nn
