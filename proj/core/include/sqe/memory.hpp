// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>

namespace sqe::memory {

// Process-wide byte accounting for tensor buffers. The profiler reads the
// high-water mark to report peak runtime memory of an inference.
void record_allocation(std::size_t bytes) noexcept;
void record_deallocation(std::size_t bytes) noexcept;

std::size_t live_bytes() noexcept;
std::size_t peak_bytes() noexcept;
/// Sets the high-water mark to the current live byte count.
void reset_peak() noexcept;

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    record_allocation(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    record_deallocation(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

}  // namespace sqe::memory
