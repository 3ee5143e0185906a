// SPDX-License-Identifier: Apache-2.0
#include "sqe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sqe {

GradCheckResult finite_difference_check(const LossBuilder& loss, std::span<Tensor* const> params,
                                        double h) {
  std::vector<bool> saved_flags;
  for (Tensor* p : params) {
    saved_flags.push_back(p->requires_grad);
    p->requires_grad = true;
    p->zero_grad();
  }
  {
    ad::Graph graph(true);
    ad::Var l = loss(graph);
    graph.backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.emplace_back(p->grad.begin(), p->grad.end());

  auto evaluate = [&]() {
    ad::Graph graph(false);
    return loss(graph).value()[0];
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double original = p[k];
      p[k] = original + h;
      const double plus = evaluate();
      p[k] = original - h;
      const double minus = evaluate();
      p[k] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[i][k];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = i;
        result.worst_index = k;
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->requires_grad = saved_flags[i];
  return result;
}

}  // namespace sqe
