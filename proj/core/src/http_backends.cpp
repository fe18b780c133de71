// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/http_backends.hpp"

#include <cmath>

#include "http_client.hpp"
#include "m3d/encoding.hpp"

namespace m3d {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json build_chat_body(const ChatRequest& request, const std::string& model) {
  ordered_json content = ordered_json::array();
  for (const auto& part : request.messages) {
    ordered_json entry;
    if (part.kind == MessagePart::Kind::Text) {
      entry["type"] = "text";
      entry["text"] = part.text;
    } else {
      entry["type"] = "image_url";
      entry["image_url"] = {{"url", image_to_url(part.image)}};
    }
    content.push_back(std::move(entry));
  }
  ordered_json message;
  message["role"] = "user";
  message["content"] = std::move(content);

  ordered_json body;
  body["model"] = model;
  body["messages"] = ordered_json::array({std::move(message)});
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ChatResponse parse_chat_body(std::string_view body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ProtocolError("chat reply is not a JSON object");
  auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty()) {
    throw ProtocolError("chat reply has no choices");
  }
  const auto& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) {
    throw ProtocolError("chat reply choice lacks a message");
  }
  const auto& content = first["message"].value("content", json());
  ChatResponse out;
  if (content.is_string()) {
    out.text = content.get<std::string>();
  } else if (content.is_array()) {
    // Some servers return content parts even for plain text replies.
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text") &&
          part["text"].is_string()) {
        out.text += part["text"].get<std::string>();
      }
    }
  } else {
    throw ProtocolError("chat reply message has no text content");
  }
  if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
    TokenUsage u;
    u.prompt_tokens = usage->value("prompt_tokens", std::int64_t{0});
    u.completion_tokens = usage->value("completion_tokens", std::int64_t{0});
    out.usage = u;
  }
  return out;
}

ordered_json build_reward_body(const RewardRequest& request) {
  ordered_json body;
  body["context"] = request.context;
  body["response"] = request.response;
  return body;
}

double parse_reward_body(std::string_view body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ProtocolError("reward reply is not a JSON object");
  auto it = doc.find("score");
  if (it == doc.end() || !it->is_number()) throw ProtocolError("reward reply lacks a numeric score");
  const double score = it->get<double>();
  if (!std::isfinite(score)) throw ProtocolError("reward score is not finite");
  return score;
}

OpenAiChatBackend::OpenAiChatBackend(HttpChatOptions options) : options_(std::move(options)) {}

ChatResponse OpenAiChatBackend::chat(const ChatRequest& request) {
  request.validate();
  const std::string body = build_chat_body(request, options_.model).dump();
  detail::HttpOptions http;
  http.timeout = options_.timeout;
  if (!options_.api_key.empty()) http.headers.emplace_back("Authorization", "Bearer " + options_.api_key);
  const std::string url = detail::join_url(options_.base_url, "/v1/chat/completions");
  const auto start = std::chrono::steady_clock::now();
  const std::string reply =
      with_retries(options_.retry, [&] { return detail::post_json(url, body, http); });
  ChatResponse out = parse_chat_body(reply);
  out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return out;
}

HttpRewardBackend::HttpRewardBackend(HttpRewardOptions options) : options_(std::move(options)) {}

double HttpRewardBackend::score_reward(const RewardRequest& request) {
  request.validate();
  const std::string body = build_reward_body(request).dump();
  detail::HttpOptions http;
  http.timeout = options_.timeout;
  const std::string url = detail::join_url(options_.reward_url, "/score");
  const std::string reply = with_retries<RewardBackendUnavailable>(
      options_.retry, [&] { return detail::post_json(url, body, http); });
  return parse_reward_body(reply);
}

}  // namespace m3d
