// SPDX-License-Identifier: Apache-2.0
#include "sqe/manifest.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sqe/error.hpp"

namespace sqe {
namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

}  // namespace

std::vector<ManifestRow> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  // Locate the header: first non-empty line.
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    header_line = line;
    if (header_line.size() >= 3 && header_line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      header_line.erase(0, 3);
    }
    header = split_csv(header_line);
    break;
  }
  if (header.empty()) throw Error(ErrorKind::kSchema, "manifest is empty: missing header");

  // column index for "path" and each task
  constexpr std::size_t kMissing = static_cast<std::size_t>(-1);
  std::size_t path_col = kMissing;
  std::array<std::size_t, kNumTasks> task_col;
  task_col.fill(kMissing);
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string_view name = strip(header[i]);
    if (name == "path") {
      path_col = i;
      continue;
    }
    bool known = false;
    for (Task t : kAllTasks) {
      if (name == task_column(t)) {
        task_col[static_cast<std::size_t>(t)] = i;
        known = true;
      }
    }
    if (!known) {
      throw Error(ErrorKind::kSchema, "unexpected manifest column '" + std::string(name) + "'");
    }
  }
  if (path_col == kMissing) throw Error(ErrorKind::kSchema, "manifest header missing column 'path'");
  for (Task t : kAllTasks) {
    if (task_col[static_cast<std::size_t>(t)] == kMissing) {
      throw Error(ErrorKind::kSchema,
                  "manifest header missing column '" + std::string(task_column(t)) + "'");
    }
  }

  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(header.size()) + " cells, found " +
                                         std::to_string(cells.size()));
    }
    ManifestRow row;
    row.source_path = std::string(strip(cells[path_col]));
    if (row.source_path.empty()) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": empty path");
    }
    for (Task t : kAllTasks) {
      const std::string_view cell = strip(cells[task_col[static_cast<std::size_t>(t)]]);
      if (cell.empty()) continue;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": cannot parse " +
                                           std::string(task_column(t)) + " value '" +
                                           std::string(cell) + "'");
      }
      row.labels[t] = v;
    }
    try {
      validate_labels(row.labels);
    } catch (const Error& e) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    row.prediction_only = !row.labels.any();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ManifestRow> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open manifest '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_manifest(buf.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::string out = kManifestHeader;
  out += '\n';
  for (const auto& row : rows) {
    if (row.source_path.find_first_of(",\r\n") != std::string::npos) {
      throw Error(ErrorKind::kArgument, "manifest path cannot hold commas or line breaks: '" +
                                            row.source_path + "'");
    }
    out += row.source_path;
    for (Task t : kAllTasks) {
      out += ',';
      if (row.labels[t]) out += format_double(*row.labels[t]);
    }
    out += '\n';
  }
  return out;
}

void save_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write manifest '" + path.string() + "'");
  out << format_manifest(rows);
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

std::filesystem::path resolve_source(const std::filesystem::path& manifest_path,
                                     const std::string& source_path) {
  std::filesystem::path p(source_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace sqe
