#include "flowvip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowvip/errors.hpp"

namespace flowvip {

std::string GradcheckReport::describe() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " (" << checked << " elements, worst rel err " << worst_rel_error;
  if (worst_input >= 0) {
    os << " at input " << worst_input << " index " << worst_index << ": analytic " << worst_analytic
       << " vs numeric " << worst_numeric;
  }
  os << ")";
  return os.str();
}

GradcheckReport gradcheck_params(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                 const GradcheckOptions& options) {
  std::vector<bool> previous;
  for (Tensor& p : params) {
    previous.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = f();
  if (loss.numel() != 1) throw ShapeError("gradcheck: function must be scalar-valued");
  loss.backward();
  std::vector<std::vector<Scalar>> analytic;
  for (Tensor& p : params) {
    analytic.push_back(p.has_grad() ? std::vector<Scalar>(p.grad().begin(), p.grad().end())
                                    : std::vector<Scalar>(p.numel(), Scalar(0)));
  }

  GradcheckReport report;
  {
    NoGradGuard no_grad;
    for (size_t k = 0; k < params.size(); ++k) {
      auto values = params[k].mutable_data();
      const int64_t n = static_cast<int64_t>(values.size());
      int64_t stride = 1;
      if (options.max_probes_per_input && *options.max_probes_per_input < n) {
        stride = std::max<int64_t>(1, n / *options.max_probes_per_input);
      }
      for (int64_t i = (stride > 1 ? stride / 2 : 0); i < n; i += stride) {
        const Scalar orig = values[i];
        values[i] = orig + options.step;
        const Scalar up = f().item();
        values[i] = orig - options.step;
        const Scalar down = f().item();
        values[i] = orig;
        const Scalar numeric = (up - down) / (2 * options.step);
        const Scalar a = analytic[k][i];
        const Scalar denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
        const Scalar rel = std::abs(a - numeric) / denom;
        ++report.checked;
        if (rel > report.worst_rel_error || report.worst_input < 0) {
          report.worst_rel_error = rel;
          report.worst_input = static_cast<int>(k);
          report.worst_index = i;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.passed = report.worst_rel_error <= options.rel_tol;
  for (size_t k = 0; k < params.size(); ++k) {
    params[k].zero_grad();
    params[k].set_requires_grad(previous[k]);
  }
  return report;
}

GradcheckReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs, const GradcheckOptions& options) {
  return gradcheck_params([&] { return f(inputs); }, inputs, options);
}

}  // namespace flowvip
