// SPDX-License-Identifier: Apache-2.0
#include "sqe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "sqe/error.hpp"

namespace sqe {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != values.size()) {
    throw Error(ErrorKind::kShape, "tensor of shape " + shape_string(shape_) + " given " +
                                       std::to_string(values.size()) + " values");
  }
  values_.assign(values.begin(), values.end());
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

void Tensor::zero_grad() { grad.assign(values_.size(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sqe
