// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

// Private HTTP helper shared by the live adapters. Keeps cpp-httplib out of
// the public headers.

#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace m3d::detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // path prefix without trailing slash
};

/// Throws ContractViolation for URLs without an http(s) scheme.
SplitUrl split_url(const std::string& url);

/// base + suffix without doubling the slash between them.
std::string join_url(std::string base, std::string_view suffix);

struct HttpOptions {
  std::chrono::milliseconds timeout{60000};
  std::vector<std::pair<std::string, std::string>> headers;
};

/// POSTs a JSON body and returns the response body. Connection failures,
/// timeouts, 429 and 5xx raise TransportError; other non-2xx statuses raise
/// ProtocolError.
std::string post_json(const std::string& url, const std::string& body, const HttpOptions& options);

/// GET with query parameters; same error mapping as post_json.
std::string get(const std::string& url, const std::vector<std::pair<std::string, std::string>>& params,
                const HttpOptions& options);

}  // namespace m3d::detail
