// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sqe/tasks.hpp"

namespace sqe {

struct ManifestRow {
  std::string source_path;  // audio (.wav) or embedding (.sqe) file
  TaskLabels labels;
  bool prediction_only = false;

  bool operator==(const ManifestRow&) const = default;
};

inline constexpr const char* kManifestHeader = "path,mos,snr,sti,t60,drr,c50";

/// Parses a manifest CSV. Rows with no labels are kept and flagged prediction-only.
std::vector<ManifestRow> parse_manifest(const std::string& text);
std::vector<ManifestRow> load_manifest(const std::filesystem::path& path);

std::string format_manifest(const std::vector<ManifestRow>& rows);
void save_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);

/// Resolves a row's source path against the directory holding the manifest.
std::filesystem::path resolve_source(const std::filesystem::path& manifest_path,
                                     const std::string& source_path);

}  // namespace sqe
