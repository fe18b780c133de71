// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/live_tools.hpp"

#include <nlohmann/json.hpp>

#include "http_client.hpp"
#include "m3d/encoding.hpp"

namespace m3d {
namespace {

std::string strip_tags(std::string_view html) {
  std::string out;
  out.reserve(html.size());
  bool in_tag = false;
  for (char c : html) {
    if (c == '<') {
      in_tag = true;
    } else if (c == '>') {
      in_tag = false;
    } else if (!in_tag) {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::string summarize_search_reply(std::string_view body) {
  auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw ProtocolError("search reply is not JSON");
  const auto* results = &doc;
  if (doc.is_object() && doc.contains("query") && doc["query"].contains("search")) {
    results = &doc["query"]["search"];
  }
  if (!results->is_array()) throw ProtocolError("search reply has no result list");
  std::string out;
  for (const auto& r : *results) {
    if (!r.is_object()) continue;
    const auto title = r.value("title", std::string());
    const auto snippet = strip_tags(r.value("snippet", r.value("extract", std::string())));
    if (title.empty() && snippet.empty()) continue;
    if (!out.empty()) out += '\n';
    out += title + ": " + snippet;
  }
  return out;
}

EncyclopediaSearch::EncyclopediaSearch(SearchOptions options) : options_(std::move(options)) {}

std::string EncyclopediaSearch::search(const std::string& query, const std::string&) {
  detail::HttpOptions http;
  http.timeout = options_.timeout;
  http.headers.emplace_back("User-Agent", "m3d/0.1");
  const std::vector<std::pair<std::string, std::string>> params = {
      {"action", "query"},   {"list", "search"}, {"srsearch", query},
      {"format", "json"},    {"srlimit", std::to_string(options_.top_k)}};
  const auto body =
      with_retries(options_.retry, [&] { return detail::get(options_.endpoint, params, http); });
  return summarize_search_reply(body);
}

HttpForgeryDetector::HttpForgeryDetector(ForgeryOptions options) : options_(std::move(options)) {}

double HttpForgeryDetector::detect(const ImageRef& image, const std::string&) {
  nlohmann::ordered_json req;
  req["image"] = image_to_url(image);
  const auto body = req.dump();
  detail::HttpOptions http;
  http.timeout = options_.timeout;
  const auto url = detail::join_url(options_.forgery_url, "/detect");
  const auto reply = with_retries(options_.retry, [&] { return detail::post_json(url, body, http); });
  auto doc = nlohmann::json::parse(reply, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("score") || !doc["score"].is_number()) {
    throw ProtocolError("forgery reply lacks a numeric score");
  }
  return doc["score"].get<double>();
}

}  // namespace m3d
