// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace sqe::flops {

/// Counts FLOPs reported by autodiff primitives on the current thread while alive.
/// Scopes nest; an inner tally does not hide operations from an outer one.
class Tally {
 public:
  Tally();
  ~Tally();
  Tally(const Tally&) = delete;
  Tally& operator=(const Tally&) = delete;

  std::uint64_t count() const { return count_; }

 private:
  friend void add(std::uint64_t) noexcept;
  std::uint64_t count_ = 0;
  Tally* outer_ = nullptr;
};

/// Called by primitives. No-op when no Tally is active on this thread.
void add(std::uint64_t n) noexcept;

}  // namespace sqe::flops
