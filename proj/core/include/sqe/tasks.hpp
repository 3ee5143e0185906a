// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sqe {

/// Prediction targets. MOS is speech quality; the rest are room-acoustics descriptors.
enum class Task { kMos = 0, kSnr, kSti, kT60, kDrr, kC50 };

inline constexpr std::size_t kNumTasks = 6;
inline constexpr std::array<Task, kNumTasks> kAllTasks = {
    Task::kMos, Task::kSnr, Task::kSti, Task::kT60, Task::kDrr, Task::kC50};

std::string_view task_name(Task task);        // "MOS", "SNR", ...
std::string_view task_column(Task task);      // manifest column: "mos", "snr", ...
std::string_view task_unit(Task task);        // "", "dB", "s"
std::optional<Task> parse_task(std::string_view text);  // case-insensitive

/// Comma-separated list; "mosra" expands to all six tasks. Order is preserved, duplicates rejected.
std::vector<Task> parse_task_list(std::string_view text);
std::string format_task_list(const std::vector<Task>& tasks);

/// Per-utterance optional scalar labels, indexed by Task.
struct TaskLabels {
  std::array<std::optional<double>, kNumTasks> values{};

  std::optional<double>& operator[](Task t) { return values[static_cast<std::size_t>(t)]; }
  const std::optional<double>& operator[](Task t) const {
    return values[static_cast<std::size_t>(t)];
  }
  bool any() const;
  std::size_t count() const;
  bool operator==(const TaskLabels&) const = default;
};

/// Throws ErrorKind::kArgument when MOS is outside [1,5], STI outside [0,1] or T60 < 0.
void validate_labels(const TaskLabels& labels);

}  // namespace sqe
