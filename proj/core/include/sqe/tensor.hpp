// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sqe/memory.hpp"

namespace sqe {

using Shape = std::vector<std::size_t>;
using Buffer = std::vector<double, memory::TrackingAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Values are held in double precision; rank-1 tensors
/// act as a single row (1 x n) inside matrix primitives.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::span<const double> values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }
  static Tensor scalar(double value) { return Tensor(Shape{1, 1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
    return n;
  }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  bool requires_grad = false;
  /// Same length as values() once a backward pass has touched this tensor.
  Buffer grad;

  void zero_grad();
  bool all_finite() const;

 private:
  Shape shape_;
  Buffer values_;
};

}  // namespace sqe
