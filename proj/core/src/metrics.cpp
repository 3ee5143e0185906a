// SPDX-License-Identifier: Apache-2.0
#include "sqe/metrics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "sqe/error.hpp"

namespace sqe {
namespace {

void check_lengths(const char* op, std::span<const double> a, std::span<const double> b, std::size_t min_len) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kShape, std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                                       " vs " + std::to_string(b.size()));
  }
  if (a.size() < min_len) {
    throw Error(ErrorKind::kArgument, std::string(op) + ": needs at least " + std::to_string(min_len) +
                                          " pairs, got " + std::to_string(a.size()));
  }
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Solves the SPD system in place by Cholesky. Returns false when a pivot collapses
// relative to the largest diagonal entry, which signals a rank-deficient design.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a[i * n + i]);
  const double tol = 1e-12 * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > tol)) return false;
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return true;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::string num(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_lengths("pearson", x, y, 2);
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorKind::kDegenerate, "pearson: zero variance in " + std::string(sxx == 0.0 ? "x" : "y"));
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double rmse(std::span<const double> pred, std::span<const double> label) {
  check_lengths("rmse", pred, label, 1);
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sse += (pred[i] - label[i]) * (pred[i] - label[i]);
  return std::sqrt(sse / static_cast<double>(pred.size()));
}

double CubicMap::operator()(double p) const {
  return ((coeffs[3] * p + coeffs[2]) * p + coeffs[1]) * p + coeffs[0];
}

CubicMap third_order_fit(std::span<const double> pred, std::span<const double> label) {
  check_lengths("third_order_fit", pred, label, 4);
  const std::size_t n = pred.size();
  const double mu = mean_of(pred);
  double var = 0.0;
  for (double p : pred) var += (p - mu) * (p - mu);
  const double sigma = std::sqrt(var / static_cast<double>(n));
  const std::size_t distinct = std::set<double>(pred.begin(), pred.end()).size();

  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = sigma > 0.0 ? (pred[i] - mu) / sigma : 0.0;

  CubicMap map;
  int degree = sigma > 0.0 ? static_cast<int>(std::min<std::size_t>(3, distinct - 1)) : 0;
  std::vector<double> b;
  for (; degree >= 0; --degree) {
    const std::size_t m = static_cast<std::size_t>(degree) + 1;
    std::vector<double> a(m * m, 0.0);
    b.assign(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 4> powers{1.0, z[i], z[i] * z[i], z[i] * z[i] * z[i]};
      for (std::size_t r = 0; r < m; ++r) {
        b[r] += powers[r] * label[i];
        for (std::size_t c = 0; c < m; ++c) a[r * m + c] += powers[r] * powers[c];
      }
    }
    if (cholesky_solve(a, b, m)) break;
  }
  if (degree < 0) {
    degree = 0;
    b = {mean_of(label)};
  }
  map.degree = degree;
  map.reduced = degree < 3;

  // Expand sum_k b_k ((p - mu) / sigma)^k into powers of p.
  const double s = sigma > 0.0 ? sigma : 1.0;
  const double center = sigma > 0.0 ? mu : 0.0;
  for (int k = 0; k <= degree; ++k) {
    const double scaled = b[static_cast<std::size_t>(k)] / std::pow(s, k);
    for (int j = 0; j <= k; ++j) {
      map.coeffs[static_cast<std::size_t>(j)] += scaled * binomial(k, j) * std::pow(-center, k - j);
    }
  }
  return map;
}

double rmse_map(std::span<const double> pred, std::span<const double> label) {
  const CubicMap map = third_order_fit(pred, label);
  std::vector<double> mapped(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) mapped[i] = map(pred[i]);
  return rmse(mapped, label);
}

MetricsReport build_report(const std::vector<Task>& tasks, const std::vector<std::vector<double>>& predictions,
                           const std::vector<std::vector<double>>& labels) {
  if (predictions.size() != tasks.size() || labels.size() != tasks.size()) {
    throw Error(ErrorKind::kShape, "build_report: per-task lists do not match the task list");
  }
  MetricsReport report;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& p = predictions[k];
    const auto& l = labels[k];
    TaskMetrics row;
    row.task = tasks[k];
    row.n = p.size();
    if (p.size() != l.size()) throw Error(ErrorKind::kShape, "build_report: pair length mismatch");
    if (row.n >= 1) row.rmse = rmse(p, l);
    if (row.n >= 4) {
      try {
        row.pcc = pearson(p, l);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerate) throw;
        row.degenerate = true;
      }
      const CubicMap map = third_order_fit(p, l);
      std::vector<double> mapped(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) mapped[i] = map(p[i]);
      row.rmse_map = rmse(mapped, l);
      row.mapping = map;
    }
    report.rows.push_back(row);
  }
  return report;
}

void write_report_csv(const MetricsReport& report, std::ostream& out) {
  out << "task,n,pcc,rmse,rmse_map,a0,a1,a2,a3\n";
  auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  for (const TaskMetrics& r : report.rows) {
    out << task_name(r.task) << ',' << r.n << ',' << opt(r.pcc) << ',' << opt(r.rmse) << ',' << opt(r.rmse_map);
    for (std::size_t i = 0; i < 4; ++i) {
      out << ',';
      if (r.mapping) out << num(r.mapping->coeffs[i]);
    }
    out << '\n';
  }
}

void write_report_table(const MetricsReport& report, std::ostream& out) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  out << std::left << std::setw(6) << "task" << std::right << std::setw(8) << "n" << std::setw(10) << "PCC"
      << std::setw(10) << "RMSE" << std::setw(10) << "RMSE_MAP" << '\n';
  for (const TaskMetrics& r : report.rows) {
    out << std::left << std::setw(6) << task_name(r.task) << std::right << std::setw(8) << r.n << std::setw(10)
        << cell(r.pcc) << std::setw(10) << cell(r.rmse) << std::setw(10) << cell(r.rmse_map);
    if (r.mapping && r.mapping->reduced) out << "  (mapping reduced to degree " << r.mapping->degree << ")";
    if (r.degenerate) out << "  (zero variance)";
    out << '\n';
  }
}

}  // namespace sqe
