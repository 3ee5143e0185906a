// SPDX-License-Identifier: Apache-2.0
#include "sqe/tasks.hpp"

#include <algorithm>
#include <cctype>

#include "sqe/error.hpp"

namespace sqe {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kMos: return "MOS";
    case Task::kSnr: return "SNR";
    case Task::kSti: return "STI";
    case Task::kT60: return "T60";
    case Task::kDrr: return "DRR";
    case Task::kC50: return "C50";
  }
  return "?";
}

std::string_view task_column(Task task) {
  switch (task) {
    case Task::kMos: return "mos";
    case Task::kSnr: return "snr";
    case Task::kSti: return "sti";
    case Task::kT60: return "t60";
    case Task::kDrr: return "drr";
    case Task::kC50: return "c50";
  }
  return "?";
}

std::string_view task_unit(Task task) {
  switch (task) {
    case Task::kSnr:
    case Task::kDrr:
    case Task::kC50: return "dB";
    case Task::kT60: return "s";
    default: return "";
  }
}

std::optional<Task> parse_task(std::string_view text) {
  const std::string key = lower(trim(text));
  for (Task t : kAllTasks) {
    if (key == task_column(t)) return t;
  }
  return std::nullopt;
}

std::vector<Task> parse_task_list(std::string_view text) {
  if (lower(trim(text)) == "mosra") return {kAllTasks.begin(), kAllTasks.end()};
  std::vector<Task> tasks;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string_view item = trim(text.substr(start, comma - start));
    auto task = parse_task(item);
    if (!task) throw Error(ErrorKind::kArgument, "unknown task '" + std::string(item) + "'");
    if (std::find(tasks.begin(), tasks.end(), *task) != tasks.end()) {
      throw Error(ErrorKind::kArgument, "duplicate task '" + std::string(item) + "'");
    }
    tasks.push_back(*task);
    start = comma + 1;
  }
  return tasks;
}

std::string format_task_list(const std::vector<Task>& tasks) {
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i) out += ',';
    out += task_name(tasks[i]);
  }
  return out;
}

bool TaskLabels::any() const {
  return std::any_of(values.begin(), values.end(), [](const auto& v) { return v.has_value(); });
}

std::size_t TaskLabels::count() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](const auto& v) { return v.has_value(); }));
}

void validate_labels(const TaskLabels& labels) {
  if (auto mos = labels[Task::kMos]; mos && (*mos < 1.0 || *mos > 5.0)) {
    throw Error(ErrorKind::kArgument, "MOS label " + std::to_string(*mos) + " outside [1, 5]");
  }
  if (auto sti = labels[Task::kSti]; sti && (*sti < 0.0 || *sti > 1.0)) {
    throw Error(ErrorKind::kArgument, "STI label " + std::to_string(*sti) + " outside [0, 1]");
  }
  if (auto t60 = labels[Task::kT60]; t60 && *t60 < 0.0) {
    throw Error(ErrorKind::kArgument, "T60 label " + std::to_string(*t60) + " is negative");
  }
}

}  // namespace sqe
