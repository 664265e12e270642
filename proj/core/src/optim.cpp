#include "flowvip/optim.hpp"

#include <cmath>
#include <unordered_map>

#include "flowvip/errors.hpp"

namespace flowvip {

Adam::Adam(nn::ParameterList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), Scalar(0));
    v_.emplace_back(p.tensor.numel(), Scalar(0));
  }
}

void Adam::step() {
  ++steps_;
  const Scalar b1 = options_.beta1, b2 = options_.beta2;
  const Scalar c1 = 1 - std::pow(b1, static_cast<Scalar>(steps_));
  const Scalar c2 = 1 - std::pow(b2, static_cast<Scalar>(steps_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const Scalar mhat = m[i] / c1;
      const Scalar vhat = v[i] / c2;
      w[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

nn::ParameterList Adam::state() const {
  nn::ParameterList out;
  out.push_back({"adam.steps", Tensor::scalar(static_cast<Scalar>(steps_))});
  for (size_t k = 0; k < params_.size(); ++k) {
    out.push_back({params_[k].name + ".m", Tensor::from(params_[k].tensor.shape(), m_[k])});
    out.push_back({params_[k].name + ".v", Tensor::from(params_[k].tensor.shape(), v_[k])});
  }
  return out;
}

void Adam::load_state(const nn::ParameterList& state) {
  std::unordered_map<std::string, const Tensor*> byname;
  for (const auto& s : state) byname[s.name] = &s.tensor;
  auto steps = byname.find("adam.steps");
  if (steps == byname.end()) throw DataError("optimizer state lacks adam.steps");
  steps_ = static_cast<int64_t>(steps->second->item());
  for (size_t k = 0; k < params_.size(); ++k) {
    for (auto [suffix, dst] : {std::pair{".m", &m_[k]}, std::pair{".v", &v_[k]}}) {
      auto it = byname.find(params_[k].name + suffix);
      if (it == byname.end()) throw DataError("optimizer state lacks " + params_[k].name + suffix);
      if (it->second->numel() != static_cast<int64_t>(dst->size())) {
        throw DataError("optimizer state size mismatch for " + params_[k].name + suffix);
      }
      auto d = it->second->data();
      dst->assign(d.begin(), d.end());
    }
  }
}

}  // namespace flowvip
