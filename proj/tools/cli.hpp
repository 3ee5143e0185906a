// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace sqe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitInternalError = 2;

// Runs the `sqe` command line. Payloads go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sqe::cli
