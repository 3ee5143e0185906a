// SPDX-License-Identifier: Apache-2.0
#include "sqe/flops.hpp"

namespace sqe::flops {
namespace {

thread_local Tally* t_innermost = nullptr;

}  // namespace

Tally::Tally() : outer_(t_innermost) { t_innermost = this; }

Tally::~Tally() { t_innermost = outer_; }

void add(std::uint64_t n) noexcept {
  for (Tally* t = t_innermost; t != nullptr; t = t->outer_) t->count_ += n;
}

}  // namespace sqe::flops
