// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sqe {

enum class ErrorKind {
  kFormat,               // malformed container or header
  kUnsupportedEncoding,  // well-formed but unsupported codec / subformat
  kTruncated,            // declared size disagrees with payload
  kData,                 // NaN/Inf or otherwise invalid payload values
  kSchema,               // CSV header / column contract violation
  kParse,                // unparsable cell, carries a line number
  kArgument,             // precondition violation on an argument
  kShape,                // tensor / dimension mismatch
  kTooShort,             // input shorter than one analysis window
  kContract,             // API misuse (e.g. non-scalar loss)
  kVersion,              // file version not understood
  kIntegrity,            // file content inconsistent with its own header
  kTaskMismatch,         // checkpoint task set differs from the requested one
  kEmptySupervision,     // no labels present for any task in a batch
  kNumeric,              // NaN/Inf produced during computation
  kDegenerate,           // zero-variance input to a statistic
  kCostModel,            // unknown layer kind in the FLOP model
  kIo,                   // filesystem failure
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace sqe
