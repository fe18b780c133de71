// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include "m3d/tools.hpp"

namespace m3d {

struct SearchOptions {
  /// MediaWiki-style search API (action=query&list=search).
  std::string endpoint = "https://en.wikipedia.org/w/api.php";
  int top_k = 3;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
};

/// Concatenates "title: snippet" lines of the top results.
std::string summarize_search_reply(std::string_view body);

class EncyclopediaSearch final : public SearchService {
 public:
  explicit EncyclopediaSearch(SearchOptions options = {});
  std::string search(const std::string& query, const std::string& sample_id) override;

 private:
  SearchOptions options_;
};

struct ForgeryOptions {
  std::string forgery_url;  // POST {forgery_url}/detect
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
};

class HttpForgeryDetector final : public ForgeryService {
 public:
  explicit HttpForgeryDetector(ForgeryOptions options);
  /// Sends {"image": <url or data URI>} and reads {"score": number}.
  double detect(const ImageRef& image, const std::string& sample_id) override;

 private:
  ForgeryOptions options_;
};

}  // namespace m3d
