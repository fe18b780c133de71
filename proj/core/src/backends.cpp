// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/backends.hpp"

#include <algorithm>
#include <string_view>

#include "m3d/errors.hpp"

namespace m3d {

bool roles::accepts_images(std::string_view role) {
  return role == kImageDetect || role == kCrossDetect || role == kPlanner ||
         role == kImageCritique || role == kImageAnalyze;
}

void ChatRequest::validate() const {
  if (role_tag.empty()) throw ContractViolation("chat request without role_tag");
  if (messages.empty()) throw ContractViolation("chat request needs at least one message part");
  if (max_tokens <= 0) throw ContractViolation("chat request max_tokens must be positive");
  if (!(temperature >= 0.0)) throw ContractViolation("chat request temperature must be >= 0");
  const bool has_image = std::any_of(messages.begin(), messages.end(), [](const MessagePart& p) {
    return p.kind == MessagePart::Kind::Image;
  });
  if (has_image && !roles::accepts_images(role_tag)) {
    throw ContractViolation("role '" + role_tag + "' may not carry image parts");
  }
}

void RewardRequest::validate() const {
  if (context.empty() || response.empty()) {
    throw ContractViolation("reward request needs non-empty context and response");
  }
}

namespace {
int checked_limit(int limit) {
  if (limit < 1 || limit > 1024) throw ContractViolation("in-flight limit must be in [1, 1024]");
  return limit;
}

struct SlotGuard {
  std::counting_semaphore<1024>& sem;
  explicit SlotGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;
};
}  // namespace

LimitedChatBackend::LimitedChatBackend(ChatBackend& inner, int limit)
    : inner_(inner), slots_(checked_limit(limit)) {}

ChatResponse LimitedChatBackend::chat(const ChatRequest& request) {
  SlotGuard guard(slots_);
  return inner_.chat(request);
}

LimitedRewardBackend::LimitedRewardBackend(RewardBackend& inner, int limit)
    : inner_(inner), slots_(checked_limit(limit)) {}

double LimitedRewardBackend::score_reward(const RewardRequest& request) {
  SlotGuard guard(slots_);
  return inner_.score_reward(request);
}

}  // namespace m3d
