// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "sqe/graph.hpp"

namespace sqe {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Builds the scalar loss for the current values of the parameters on `graph`.
using LossBuilder = std::function<ad::Var(ad::Graph& graph)>;

/// Central differences on every coordinate of every tensor in `params`, compared
/// against one reverse-mode pass. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult finite_difference_check(const LossBuilder& loss, std::span<Tensor* const> params,
                                        double h = 1e-4);

}  // namespace sqe
