// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "m3d/types.hpp"

namespace m3d {

// ---------------------------------------------------------------------------
// Requests and responses
// ---------------------------------------------------------------------------

namespace roles {
inline constexpr const char* kTextDetect = "text-detect";
inline constexpr const char* kImageDetect = "image-detect";
inline constexpr const char* kCrossDetect = "cross-detect";
inline constexpr const char* kPlanner = "planner";
inline constexpr const char* kTextCritique = "text-critique";
inline constexpr const char* kImageCritique = "image-critique";
inline constexpr const char* kLogicCheck = "logic-check";
inline constexpr const char* kImageAnalyze = "image-analyze";

/// Roles allowed to carry image parts.
bool accepts_images(std::string_view role);
}  // namespace roles

struct MessagePart {
  enum class Kind { Text, Image };
  Kind kind = Kind::Text;
  std::string text;
  ImageRef image;

  static MessagePart of_text(std::string text) { return {Kind::Text, std::move(text), {}}; }
  static MessagePart of_image(ImageRef image) { return {Kind::Image, {}, std::move(image)}; }
};

struct ChatRequest {
  std::string role_tag;
  /// Routing key for scripted backends; never sent on the wire.
  std::string sample_id;
  std::vector<MessagePart> messages;
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  int max_tokens = 1024;
  std::optional<int> candidate_index;

  /// Throws ContractViolation on an empty message list, non-positive
  /// max_tokens, negative temperature or an image part on a text-only role.
  void validate() const;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  std::optional<TokenUsage> usage;
  std::int64_t latency_ms = 0;
};

struct RewardRequest {
  std::string context;
  std::string response;
  // Routing key for scripted backends.
  std::string sample_id;
  Stage stage = Stage::Text;
  int candidate_index = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Connection refused, timeout, 5xx. The only retryable class.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The server answered, but not in the expected shape.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Transport retries exhausted.
class BackendUnavailable : public BackendError {
 public:
  using BackendError::BackendError;
};

class RewardBackendUnavailable : public BackendUnavailable {
 public:
  using BackendUnavailable::BackendUnavailable;
};

/// Scripted backend has no record for the requested key.
class MissingFixture : public BackendError {
 public:
  using BackendError::BackendError;
};

// ---------------------------------------------------------------------------
// Contracts
// ---------------------------------------------------------------------------

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
};

class RewardBackend {
 public:
  virtual ~RewardBackend() = default;
  /// Unbounded scalar; normalization is the caller's business.
  virtual double score_reward(const RewardRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Retry policy
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds base_backoff{100};
  /// Injectable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Runs `attempt`, retrying on TransportError with exponential backoff
/// (base, 2*base, ...). Other errors propagate immediately. After the last
/// failed retry a `Unavailable` (BackendUnavailable or subclass) is thrown.
template <typename Unavailable = BackendUnavailable, typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& attempt) -> decltype(attempt()) {
  auto backoff = policy.base_backoff;
  for (int tries = 0;; ++tries) {
    try {
      return attempt();
    } catch (const TransportError& e) {
      if (tries >= policy.max_retries) {
        throw Unavailable(std::string("backend unavailable after ") +
                          std::to_string(tries + 1) + " attempts: " + e.what());
      }
    }
    if (policy.sleep) {
      policy.sleep(backoff);
    } else {
      std::this_thread::sleep_for(backoff);
    }
    backoff *= 2;
  }
}

// ---------------------------------------------------------------------------
// Decorators
// ---------------------------------------------------------------------------

/// Caps the number of concurrent in-flight calls to the wrapped backend.
class LimitedChatBackend final : public ChatBackend {
 public:
  LimitedChatBackend(ChatBackend& inner, int limit);
  ChatResponse chat(const ChatRequest& request) override;

 private:
  ChatBackend& inner_;
  std::counting_semaphore<1024> slots_;
};

class LimitedRewardBackend final : public RewardBackend {
 public:
  LimitedRewardBackend(RewardBackend& inner, int limit);
  double score_reward(const RewardRequest& request) override;

 private:
  RewardBackend& inner_;
  std::counting_semaphore<1024> slots_;
};

}  // namespace m3d
