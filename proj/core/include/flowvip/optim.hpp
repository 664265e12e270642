#pragma once

#include <cstdint>
#include <vector>

#include "flowvip/nn.hpp"

namespace flowvip {

struct AdamOptions {
  Scalar lr = Scalar(1e-4);
  Scalar beta1 = 0;
  Scalar beta2 = Scalar(0.99);
  Scalar eps = Scalar(1e-8);
};

/// Bias-corrected Adam. Parameters without a gradient are left untouched and
/// their moments are not advanced.
class Adam {
 public:
  Adam(nn::ParameterList params, AdamOptions options);

  void step();
  void zero_grad() { nn::zero_grads(params_); }

  void set_lr(Scalar lr) { options_.lr = lr; }
  Scalar lr() const { return options_.lr; }
  int64_t steps() const { return steps_; }
  const nn::ParameterList& params() const { return params_; }

  /// Moments exposed as named tensors ("<name>.m", "<name>.v") plus the step
  /// counter, for checkpointing.
  nn::ParameterList state() const;
  void load_state(const nn::ParameterList& state);

 private:
  nn::ParameterList params_;
  AdamOptions options_;
  std::vector<std::vector<Scalar>> m_;
  std::vector<std::vector<Scalar>> v_;
  int64_t steps_ = 0;
};

}  // namespace flowvip
