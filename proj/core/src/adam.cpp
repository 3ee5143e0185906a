// SPDX-License-Identifier: Apache-2.0
#include "sqe/adam.hpp"

#include <cmath>
#include <string>

#include "sqe/error.hpp"

namespace sqe {

void adam_step(AdamState& state, std::span<Tensor* const> params) {
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::kShape, "adam_step: optimizer tracks " + std::to_string(state.m.size()) +
                                       " tensors, given " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i];
    if (state.m[i].size() != p.size() || state.v[i].size() != p.size()) {
      throw Error(ErrorKind::kShape, "adam_step: moment size mismatch for tensor " +
                                         std::to_string(i) + " of shape " + shape_string(p.shape()));
    }
    if (!p.grad.empty() && p.grad.size() != p.size()) {
      throw Error(ErrorKind::kShape, "adam_step: gradient size mismatch for tensor " + std::to_string(i));
    }
  }

  state.step += 1;
  const AdamOptions& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (p.grad.empty()) continue;
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      const double updated = p[k] - o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
      p[k] = static_cast<double>(static_cast<float>(updated));
    }
  }
}

}  // namespace sqe
