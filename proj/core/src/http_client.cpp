// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "http_client.hpp"

#include <httplib.h>

#include "m3d/backends.hpp"
#include "m3d/errors.hpp"

namespace m3d::detail {

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ContractViolation("URL without scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ContractViolation("unsupported URL scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.path = url.substr(path_start);
  }
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

std::string join_url(std::string base, std::string_view suffix) {
  while (!base.empty() && base.back() == '/') base.pop_back();
  return base.append(suffix);
}

namespace {

httplib::Headers make_headers(const HttpOptions& options) {
  httplib::Headers headers;
  for (const auto& [k, v] : options.headers) headers.emplace(k, v);
  return headers;
}

void configure(httplib::Client& client, const HttpOptions& options) {
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
}

std::string check(const httplib::Result& res, const std::string& url) {
  if (!res) {
    throw TransportError("request to " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("request to " + url + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError("request to " + url + " returned HTTP " + std::to_string(res->status) +
                        ": " + res->body.substr(0, 512));
  }
  return res->body;
}

}  // namespace

std::string post_json(const std::string& url, const std::string& body, const HttpOptions& options) {
  const auto split = split_url(url);
  httplib::Client client(split.origin);
  configure(client, options);
  auto res = client.Post(split.path.empty() ? "/" : split.path, make_headers(options), body,
                         "application/json");
  return check(res, url);
}

std::string get(const std::string& url, const std::vector<std::pair<std::string, std::string>>& params,
                const HttpOptions& options) {
  const auto split = split_url(url);
  httplib::Client client(split.origin);
  configure(client, options);
  httplib::Params p;
  for (const auto& [k, v] : params) p.emplace(k, v);
  auto res = client.Get(split.path.empty() ? "/" : split.path, p, make_headers(options));
  return check(res, url);
}

}  // namespace m3d::detail
