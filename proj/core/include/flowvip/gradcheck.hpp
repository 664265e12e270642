#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowvip/tensor.hpp"

namespace flowvip {

struct GradcheckOptions {
  Scalar step = Scalar(1e-6);
  Scalar rel_tol = Scalar(1e-3);
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are judged on an absolute scale of rel_tol * abs_floor.
  Scalar abs_floor = Scalar(1e-4);
  // When set, only this many evenly spaced elements of each input are probed.
  std::optional<int64_t> max_probes_per_input;
};

struct GradcheckReport {
  bool passed = true;
  int64_t checked = 0;
  Scalar worst_rel_error = 0;
  int worst_input = -1;
  int64_t worst_index = -1;
  Scalar worst_analytic = 0;
  Scalar worst_numeric = 0;

  std::string describe() const;
};

/// Compares reverse-mode gradients of the scalar function `f` with central
/// differences, element by element, for every tensor in `inputs`. The inputs
/// must be leaves; they are flagged requires_grad for the duration of the
/// check and perturbed in place (restored afterwards).
GradcheckReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs, const GradcheckOptions& options = {});

/// Variant for functions closing over parameters: `params` are probed, `f`
/// takes no arguments.
GradcheckReport gradcheck_params(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                 const GradcheckOptions& options = {});

}  // namespace flowvip
