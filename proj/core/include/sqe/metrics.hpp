// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "sqe/tasks.hpp"

namespace sqe {

/// Sample Pearson correlation. Throws ErrorKind::kDegenerate on zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double rmse(std::span<const double> pred, std::span<const double> label);

/// label ~ a0 + a1 p + a2 p^2 + a3 p^3, least squares.
struct CubicMap {
  std::array<double, 4> coeffs{};  // a0..a3
  int degree = 3;                  // lower when the design was rank deficient
  bool reduced = false;

  double operator()(double p) const;
};

CubicMap third_order_fit(std::span<const double> pred, std::span<const double> label);
double rmse_map(std::span<const double> pred, std::span<const double> label);

struct TaskMetrics {
  Task task = Task::kMos;
  std::size_t n = 0;
  std::optional<double> rmse;  // absent when n == 0
  std::optional<double> pcc;   // absent when n < 4 or a side has zero variance
  std::optional<double> rmse_map;
  std::optional<CubicMap> mapping;
  bool degenerate = false;  // zero variance prevented a correlation
};

struct MetricsReport {
  std::vector<TaskMetrics> rows;
};

/// Tasks with fewer than 4 pairs report only rmse. A rank-deficient cubic is
/// flagged through CubicMap::reduced.
MetricsReport build_report(const std::vector<Task>& tasks,
                           const std::vector<std::vector<double>>& predictions,
                           const std::vector<std::vector<double>>& labels);

/// CSV `task,n,pcc,rmse,rmse_map,a0,a1,a2,a3`; unavailable values are empty cells.
void write_report_csv(const MetricsReport& report, std::ostream& out);
void write_report_table(const MetricsReport& report, std::ostream& out);

}  // namespace sqe
