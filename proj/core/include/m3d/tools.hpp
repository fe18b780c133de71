// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include "m3d/backends.hpp"
#include "m3d/meter.hpp"
#include "m3d/types.hpp"

namespace m3d {

enum class ToolId : int { WebSearch = 0, LogicCheck = 1, ForgeryDetect = 2, ImageAnalyze = 3 };
enum class ToolStatus : int { Ok = 0, Unavailable = 1 };

std::string_view tool_name(ToolId id) noexcept;
std::optional<ToolId> parse_tool(std::string_view name);

/// When status is Unavailable, `content` holds the diagnostic.
struct ToolObservation {
  ToolId tool_id = ToolId::WebSearch;
  std::string content;
  ToolStatus status = ToolStatus::Ok;
  std::int64_t latency_ms = 0;

  bool ok() const noexcept { return status == ToolStatus::Ok; }
};

/// "manipulation_score=<x>; verdict=<likely-forged|likely-authentic>".
/// Scores at or above the threshold are reported as likely forged.
std::string format_forgery_summary(double score, double threshold = 0.5);

// External services behind the tools. Implementations throw BackendError
// subclasses on failure; the Toolset turns those into Unavailable.

class SearchService {
 public:
  virtual ~SearchService() = default;
  virtual std::string search(const std::string& query, const std::string& sample_id) = 0;
};

class ForgeryService {
 public:
  virtual ~ForgeryService() = default;
  /// Manipulation probability in [0,1].
  virtual double detect(const ImageRef& image, const std::string& sample_id) = 0;
};

struct ToolsetOptions {
  std::size_t char_cap = 2000;
  double forgery_threshold = 0.5;
  int max_tokens = 512;
};

/// Fixed prompts for the chat-backed tools.
extern const char* const kLogicCheckPrompt;
extern const char* const kImageAnalyzePrompt;

/// Stateless bundle of the four auxiliary tools. Every method degrades a
/// service failure into an Unavailable observation; only precondition and
/// input errors escape.
class Toolset {
 public:
  Toolset(SearchService& search, ForgeryService& forgery, ChatBackend& chat,
          ToolsetOptions options = {});

  /// Throws ContractViolation on an empty query.
  ToolObservation web_search(const std::string& sample_id, const std::string& query) const;
  ToolObservation logic_check(const std::string& sample_id, const std::string& claim,
                              Meter& meter) const;
  /// Throws InputError when the image cannot be resolved.
  ToolObservation forgery_detect(const std::string& sample_id, const ImageRef& image) const;
  ToolObservation image_analyze(const std::string& sample_id, const ImageRef& image,
                                Meter& meter) const;

  const ToolsetOptions& options() const noexcept { return options_; }

 private:
  SearchService& search_;
  ForgeryService& forgery_;
  ChatBackend& chat_;
  ToolsetOptions options_;
};

/// Per-run observation cache with single-flight semantics: concurrent
/// first requests for one (tool, sample) key share one live call.
class ObservationCache {
 public:
  template <typename Fetch>
  ToolObservation get_or_fetch(ToolId tool, const std::string& sample_id, Fetch&& fetch) {
    std::promise<ToolObservation> promise;
    std::shared_future<ToolObservation> future;
    bool leader = false;
    {
      std::lock_guard lock(mu_);
      auto key = std::make_pair(tool, sample_id);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        future = promise.get_future().share();
        entries_.emplace(std::move(key), future);
        leader = true;
      } else {
        future = it->second;
      }
    }
    if (leader) {
      try {
        promise.set_value(fetch());
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return future.get();
  }

 private:
  std::mutex mu_;
  std::map<std::pair<ToolId, std::string>, std::shared_future<ToolObservation>> entries_;
};

/// Tool access for one sample within one pipeline run. Each tool runs at
/// most once; the meter passed on the first (live) fetch is charged.
class SampleTools {
 public:
  SampleTools(const Toolset& tools, const Sample& sample) : tools_(tools), sample_(sample) {}

  ToolObservation text_evidence(Meter& meter);
  ToolObservation logic(Meter& meter);
  ToolObservation forgery(Meter& meter);
  ToolObservation image_description(Meter& meter);

 private:
  const Toolset& tools_;
  const Sample& sample_;
  ObservationCache cache_;
};

}  // namespace m3d
