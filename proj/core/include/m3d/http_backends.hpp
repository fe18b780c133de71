// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "m3d/backends.hpp"

namespace m3d {

// Wire format helpers. Kept free so recorded exchanges can be checked
// without a server.

/// OpenAI-compatible chat-completions body: model, messages, temperature,
/// max_tokens and (when set) seed. Message parts become "text" and
/// "image_url" content entries of a single user message.
nlohmann::ordered_json build_chat_body(const ChatRequest& request, const std::string& model);
/// Reads choices[0].message.content (+ usage when present). Throws ProtocolError.
ChatResponse parse_chat_body(std::string_view body);

nlohmann::ordered_json build_reward_body(const RewardRequest& request);
/// Reads {"score": number}. Throws ProtocolError.
double parse_reward_body(std::string_view body);

struct HttpChatOptions {
  std::string base_url;  // POST {base_url}/v1/chat/completions
  std::string model = "default";
  std::string api_key;   // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
};

class OpenAiChatBackend final : public ChatBackend {
 public:
  explicit OpenAiChatBackend(HttpChatOptions options);
  ChatResponse chat(const ChatRequest& request) override;

 private:
  HttpChatOptions options_;
};

struct HttpRewardOptions {
  std::string reward_url;  // POST {reward_url}/score
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
};

class HttpRewardBackend final : public RewardBackend {
 public:
  explicit HttpRewardBackend(HttpRewardOptions options);
  /// Throws RewardBackendUnavailable once transport retries are exhausted.
  double score_reward(const RewardRequest& request) override;

 private:
  HttpRewardOptions options_;
};

}  // namespace m3d
