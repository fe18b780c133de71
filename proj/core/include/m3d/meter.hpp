// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>

#include "m3d/types.hpp"

namespace m3d {

/// Thread-safe call counters for one ledger bucket (planner or a stage).
class Meter {
 public:
  void chat() noexcept { chat_.fetch_add(1, std::memory_order_relaxed); }
  void tool() noexcept { tool_.fetch_add(1, std::memory_order_relaxed); }
  void reward() noexcept { reward_.fetch_add(1, std::memory_order_relaxed); }
  void critique() noexcept { critique_.fetch_add(1, std::memory_order_relaxed); }
  void retry() noexcept { retry_.fetch_add(1, std::memory_order_relaxed); }
  void candidate() noexcept { candidates_.fetch_add(1, std::memory_order_relaxed); }

  CallCounts snapshot() const noexcept {
    CallCounts c;
    c.chat_calls = chat_.load();
    c.tool_calls = tool_.load();
    c.reward_calls = reward_.load();
    c.critique_calls = critique_.load();
    c.retry_calls = retry_.load();
    c.candidates_generated = candidates_.load();
    return c;
  }

 private:
  std::atomic<std::int64_t> chat_{0};
  std::atomic<std::int64_t> tool_{0};
  std::atomic<std::int64_t> reward_{0};
  std::atomic<std::int64_t> critique_{0};
  std::atomic<std::int64_t> retry_{0};
  std::atomic<std::int64_t> candidates_{0};
};

}  // namespace m3d
