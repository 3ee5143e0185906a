// SPDX-License-Identifier: Apache-2.0
#include "sqe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "sqe/error.hpp"
#include "sqe/flops.hpp"

namespace sqe::ad {
namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorKind::kShape, std::string(op) + ": incompatible shapes " +
                                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& detail) {
  throw Error(ErrorKind::kShape, std::string(op) + ": shape " + shape_string(a.shape()) + " " + detail);
}

Graph& graph_of(const char* op, Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw Error(ErrorKind::kContract, std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

void check_axis(const char* op, int axis) {
  if (axis != 0 && axis != 1) {
    throw Error(ErrorKind::kArgument, std::string(op) + ": axis must be 0 or 1");
  }
}

bool same_matrix(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

enum class Binary { kAdd, kSub, kMul };

Var binary(const char* op, Binary kind, Var a, Var b) {
  Graph& g = graph_of(op, a, b);
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  if (!same_matrix(x, y)) shape_error(op, x, y);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (kind) {
      case Binary::kAdd: out[i] = x[i] + y[i]; break;
      case Binary::kSub: out[i] = x[i] - y[i]; break;
      case Binary::kMul: out[i] = x[i] * y[i]; break;
    }
  }
  flops::add(out.size());
  return g.record(std::move(out), {a.id, b.id}, [kind, ai = a.id, bi = b.id](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    if (g.requires_grad(ai)) {
      Buffer& da = g.grad(ai);
      const Tensor& y = g.value(bi);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += kind == Binary::kMul ? dy[i] * y[i] : dy[i];
    }
    if (g.requires_grad(bi)) {
      Buffer& db = g.grad(bi);
      const Tensor& x = g.value(ai);
      for (std::size_t i = 0; i < db.size(); ++i) {
        db[i] += kind == Binary::kMul ? dy[i] * x[i] : (kind == Binary::kSub ? -dy[i] : dy[i]);
      }
    }
  });
}

enum class Unary { kRelu, kTanh, kSigmoid };

Var unary(Unary kind, Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (kind) {
      case Unary::kRelu: out[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case Unary::kTanh: out[i] = std::tanh(x[i]); break;
      case Unary::kSigmoid: out[i] = 1.0 / (1.0 + std::exp(-x[i])); break;
    }
  }
  flops::add(out.size());
  return g.record(std::move(out), {a.id}, [kind, ai = a.id](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    const Tensor& y = g.value(self);
    const Tensor& x = g.value(ai);
    Buffer& dx = g.grad(ai);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      switch (kind) {
        case Unary::kRelu: dx[i] += x[i] > 0.0 ? dy[i] : 0.0; break;
        case Unary::kTanh: dx[i] += dy[i] * (1.0 - y[i] * y[i]); break;
        case Unary::kSigmoid: dx[i] += dy[i] * y[i] * (1.0 - y[i]); break;
      }
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of("matmul", a, b);
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k) shape_error("matmul", x, y);
  Tensor out = Tensor::matrix(m, n);
  const double* xs = x.values().data();
  const double* ys = y.values().data();
  double* os = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = os + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xs[i * k + p];
      const double* yrow = ys + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * yrow[j];
    }
  }
  flops::add(2ull * m * k * n);
  return g.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, m, k, n](Graph& g, std::size_t self) {
    const double* dy = g.grad(self).data();
    const double* xs = g.value(ai).values().data();
    const double* ys = g.value(bi).values().data();
    if (g.requires_grad(ai)) {
      double* dx = g.grad(ai).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dyrow = dy + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* yrow = ys + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * yrow[j];
          dx[i * k + p] += acc;
        }
      }
    }
    if (g.requires_grad(bi)) {
      double* dw = g.grad(bi).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dyrow = dy + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = xs[i * k + p];
          if (xv == 0.0) continue;
          double* drow = dw + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += xv * dyrow[j];
        }
      }
    }
  });
}

Var add(Var a, Var b) { return binary("add", Binary::kAdd, a, b); }
Var sub(Var a, Var b) { return binary("sub", Binary::kSub, a, b); }
Var mul(Var a, Var b) { return binary("mul", Binary::kMul, a, b); }

Var scale(Var a, double factor) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  flops::add(out.size());
  return g.record(std::move(out), {a.id}, [ai = a.id, factor](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    Buffer& dx = g.grad(ai);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
  });
}

Var add_bias(Var a, Var b) {
  Graph& g = graph_of("add_bias", a, b);
  const Tensor& x = g.value(a);
  const Tensor& bias = g.value(b);
  const std::size_t rows = x.rows(), cols = x.cols();
  if (bias.size() != cols) shape_error("add_bias", x, bias);
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.at(r, c) + bias[c];
  }
  flops::add(out.size());
  return g.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, rows, cols](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    if (g.requires_grad(ai)) {
      Buffer& dx = g.grad(ai);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
    if (g.requires_grad(bi)) {
      Buffer& db = g.grad(bi);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
      }
    }
  });
}

Var relu(Var x) { return unary(Unary::kRelu, x); }
Var tanh(Var x) { return unary(Unary::kTanh, x); }
Var sigmoid(Var x) { return unary(Unary::kSigmoid, x); }

Var softmax(Var a, int axis) {
  check_axis("softmax", axis);
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::matrix(rows, cols);
  // Lines are rows for axis 1 and columns for axis 0.
  const std::size_t lines = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  const std::size_t stride = axis == 1 ? 1 : cols;
  auto base = [=](std::size_t line) { return axis == 1 ? line * cols : line; };
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t o = base(l);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[o + i * stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(x[o + i * stride] - mx);
      out[o + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[o + i * stride] /= total;
  }
  flops::add(5ull * out.size());
  return g.record(std::move(out), {a.id}, [ai = a.id, lines, len, stride, base](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    const Tensor& y = g.value(self);
    Buffer& dx = g.grad(ai);
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t o = base(l);
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += dy[o + i * stride] * y[o + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t at = o + i * stride;
        dx[at] += y[at] * (dy[at] - dot);
      }
    }
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  Graph& g = graph_of("layer_norm", a, gain);
  graph_of("layer_norm", a, bias);
  const Tensor& x = g.value(a);
  const Tensor& gv = g.value(gain);
  const Tensor& bv = g.value(bias);
  const std::size_t rows = x.rows(), d = x.cols();
  if (gv.size() != d) shape_error("layer_norm", x, gv);
  if (bv.size() != d) shape_error("layer_norm", x, bv);

  auto normalized = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out = Tensor::matrix(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x.at(r, c);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (x.at(r, c) - mu) * inv;
      (*normalized)[r * d + c] = xh;
      out.at(r, c) = xh * gv[c] + bv[c];
    }
  }
  flops::add(rows * (7ull * d + 5));
  return g.record(std::move(out), {a.id, gain.id, bias.id},
                  [ai = a.id, gi = gain.id, bi = bias.id, rows, d, normalized, inv_std](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    const Tensor& gv = g.value(gi);
    const std::vector<double>& xh = *normalized;
    if (g.requires_grad(gi)) {
      Buffer& dg = g.grad(gi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) dg[c] += dy[r * d + c] * xh[r * d + c];
    }
    if (g.requires_grad(bi)) {
      Buffer& db = g.grad(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) db[c] += dy[r * d + c];
    }
    if (g.requires_grad(ai)) {
      Buffer& dx = g.grad(ai);
      const double dd = static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = dy[r * d + c] * gv[c];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh[r * d + c];
        }
        const double inv = (*inv_std)[r];
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = dy[r * d + c] * gv[c];
          dx[r * d + c] += inv / dd * (dd * dxh - sum_dxh - xh[r * d + c] * sum_dxh_xh);
        }
      }
    }
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  check_axis("concat", axis);
  if (xs.empty()) throw Error(ErrorKind::kArgument, "concat: no inputs");
  Graph& g = *xs.front().graph;
  const Tensor& first = g.value(xs.front());
  std::size_t rows = 0, cols = 0;
  for (Var v : xs) {
    graph_of("concat", xs.front(), v);
    const Tensor& t = g.value(v);
    if (axis == 0) {
      if (t.cols() != first.cols()) shape_error("concat", first, t);
      rows += t.rows();
      cols = t.cols();
    } else {
      if (t.rows() != first.rows()) shape_error("concat", first, t);
      cols += t.cols();
      rows = t.rows();
    }
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (Var v : xs) {
    const Tensor& t = g.value(v);
    ids.push_back(v.id);
    offsets.push_back(offset);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (axis == 0) out.at(offset + r, c) = t.at(r, c);
        else out.at(r, offset + c) = t.at(r, c);
      }
    }
    offset += axis == 0 ? t.rows() : t.cols();
  }
  return g.record(std::move(out), ids, [ids, offsets, axis, cols](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.requires_grad(ids[k])) continue;
      const Tensor& t = g.value(ids[k]);
      Buffer& dx = g.grad(ids[k]);
      for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
          const std::size_t src = axis == 0 ? (offsets[k] + r) * cols + c : r * cols + offsets[k] + c;
          dx[r * t.cols() + c] += dy[src];
        }
      }
    }
  });
}

Var slice(Var a, std::size_t row_begin, std::size_t row_end, std::size_t col_begin, std::size_t col_end) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  if (row_begin >= row_end || row_end > x.rows() || col_begin >= col_end || col_end > x.cols()) {
    shape_error("slice", x, "cannot take rows [" + std::to_string(row_begin) + "," +
                                std::to_string(row_end) + ") cols [" + std::to_string(col_begin) +
                                "," + std::to_string(col_end) + ")");
  }
  const std::size_t rows = row_end - row_begin, cols = col_end - col_begin, src_cols = x.cols();
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.at(row_begin + r, col_begin + c);
  return g.record(std::move(out), {a.id},
                  [ai = a.id, row_begin, col_begin, rows, cols, src_cols](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    Buffer& dx = g.grad(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        dx[(row_begin + r) * src_cols + col_begin + c] += dy[r * cols + c];
  });
}

Var mean(Var a, int axis) {
  check_axis("mean", axis);
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = axis == 0 ? Tensor::matrix(1, cols) : Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += x.at(r, c);
  const double n = static_cast<double>(axis == 0 ? rows : cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= n;
  flops::add(x.size() + out.size());
  return g.record(std::move(out), {a.id}, [ai = a.id, axis, rows, cols, n](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    Buffer& dx = g.grad(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += dy[axis == 0 ? c : r] / n;
  });
}

Var max(Var a, int axis) {
  check_axis("max", axis);
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = axis == 0 ? Tensor::matrix(1, cols) : Tensor::matrix(rows, 1);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size(), 0);
  std::fill(out.values().begin(), out.values().end(), -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t o = axis == 0 ? c : r;
      if (x.at(r, c) > out[o]) {
        out[o] = x.at(r, c);
        (*argmax)[o] = r * cols + c;
      }
    }
  }
  flops::add(x.size());
  return g.record(std::move(out), {a.id}, [ai = a.id, argmax](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    Buffer& dx = g.grad(ai);
    for (std::size_t o = 0; o < argmax->size(); ++o) dx[(*argmax)[o]] += dy[o];
  });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  double total = 0.0;
  for (double v : x.values()) total += v;
  flops::add(x.size());
  return g.record(Tensor::scalar(total), {a.id}, [ai = a.id](Graph& g, std::size_t self) {
    const double dy = g.grad(self)[0];
    Buffer& dx = g.grad(ai);
    for (double& v : dx) v += dy;
  });
}

Var transpose(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::matrix(cols, rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = x.at(r, c);
  return g.record(std::move(out), {a.id}, [ai = a.id, rows, cols](Graph& g, std::size_t self) {
    const Buffer& dy = g.grad(self);
    Buffer& dx = g.grad(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += dy[c * rows + r];
  });
}

}  // namespace sqe::ad
