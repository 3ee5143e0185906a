// SPDX-License-Identifier: Apache-2.0
#include "sqe/error.hpp"

namespace sqe {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kUnsupportedEncoding: return "unsupported-encoding";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kData: return "data";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kArgument: return "argument";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kTooShort: return "too-short";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kTaskMismatch: return "task-mismatch";
    case ErrorKind::kEmptySupervision: return "empty-supervision";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kCostModel: return "cost-model";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace sqe
