// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "sqe/graph.hpp"

// Differentiable primitives. Every op validates shapes (ErrorKind::kShape, naming
// the op and both shapes) and reports its FLOP cost to sqe::flops:
//   matmul m x k . k x n   2*m*k*n
//   add, sub, mul, scale   1 per element
//   add_bias               1 per element of x
//   relu, tanh, sigmoid    1 per element
//   softmax                5 per element (max, subtract, exp, sum, divide)
//   layer_norm n x d       n * (7*d + 5)
//   mean                   1 per input element + 1 per output element
//   max, sum               1 per input element
//   concat, slice, transpose: 0 (data movement)
namespace sqe::ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// x (n x m) plus a bias of m elements broadcast over rows.
Var add_bias(Var x, Var bias);

Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
/// axis 0 normalizes each column, axis 1 each row. Max-subtracted.
Var softmax(Var x, int axis);
/// Row-wise normalization (eps 1e-5 inside the square root) followed by gain and bias of length d.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var concat(const std::vector<Var>& xs, int axis);
/// Rows [row_begin, row_end) and columns [col_begin, col_end).
Var slice(Var x, std::size_t row_begin, std::size_t row_end, std::size_t col_begin,
          std::size_t col_end);
/// Reductions keep the reduced axis with length 1 (axis 0 -> 1 x m, axis 1 -> n x 1).
Var mean(Var x, int axis);
Var max(Var x, int axis);
Var sum(Var x);
Var transpose(Var x);

}  // namespace sqe::ad
