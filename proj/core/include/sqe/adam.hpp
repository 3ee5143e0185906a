// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sqe/tensor.hpp"

namespace sqe {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of every tensor in `params` from its `grad`.
/// Moments are lazily sized on the first call. Updated values are rounded to
/// float32 so parameters always stay representable in the checkpoint format.
void adam_step(AdamState& state, std::span<Tensor* const> params);

}  // namespace sqe
