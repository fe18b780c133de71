// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>

#include "m3d/backends.hpp"
#include "m3d/tools.hpp"

namespace m3d {

/// Scripted responses keyed by request identity. Records come from a
/// directory of JSONL files (all *.jsonl, read in file-name order):
///
///   chat:   {"role": str, "sample_id": str, "candidate_index": int, "response": str}
///   reward: {"sample_id": str, "stage": str, "candidate_index": int, "score": number}
///   tool:   {"tool": "web_search"|"forgery_detect", "sample_id": str,
///            "content": str | "score": number | "unavailable": true}
///
/// Chat-backed tools (logic-check, image-analyze) are scripted as chat
/// records with candidate_index 0.
class FixtureStore {
 public:
  struct ToolRecord {
    std::optional<std::string> content;
    std::optional<double> score;
    bool unavailable = false;
  };

  /// Throws InputError naming file and line on malformed or duplicate records.
  static FixtureStore load_directory(const std::filesystem::path& dir);

  void add_chat(std::string role, std::string sample_id, int candidate_index, std::string response);
  void add_reward(std::string sample_id, Stage stage, int candidate_index, double score);
  void add_tool(ToolId tool, std::string sample_id, ToolRecord record);

  const std::string* find_chat(const std::string& role, const std::string& sample_id,
                               int candidate_index) const;
  std::optional<double> find_reward(const std::string& sample_id, Stage stage,
                                    int candidate_index) const;
  const ToolRecord* find_tool(ToolId tool, const std::string& sample_id) const;

  /// Writes chat.jsonl, reward.jsonl and tools.jsonl into `dir`.
  void save_directory(const std::filesystem::path& dir) const;

  std::size_t size() const noexcept { return chat_.size() + reward_.size() + tools_.size(); }

 private:
  using ChatKey = std::tuple<std::string, std::string, int>;
  using RewardKey = std::tuple<std::string, int, int>;
  using ToolKey = std::pair<int, std::string>;

  std::map<ChatKey, std::string> chat_;
  std::map<RewardKey, double> reward_;
  std::map<ToolKey, ToolRecord> tools_;
};

/// Chat backend answering from a FixtureStore. Pure in its key
/// (role_tag, sample_id, candidate_index); seeds and temperatures are ignored.
class ScriptedChat final : public ChatBackend {
 public:
  explicit ScriptedChat(const FixtureStore& store) : store_(store) {}
  /// Throws MissingFixture for unknown keys.
  ChatResponse chat(const ChatRequest& request) override;
  std::int64_t calls() const noexcept { return calls_.load(); }

 private:
  const FixtureStore& store_;
  std::atomic<std::int64_t> calls_{0};
};

class ScriptedReward final : public RewardBackend {
 public:
  explicit ScriptedReward(const FixtureStore& store) : store_(store) {}
  double score_reward(const RewardRequest& request) override;
  std::int64_t calls() const noexcept { return calls_.load(); }

 private:
  const FixtureStore& store_;
  std::atomic<std::int64_t> calls_{0};
};

/// Missing or "unavailable" records raise BackendError, which the Toolset
/// degrades to an Unavailable observation.
class ScriptedSearch final : public SearchService {
 public:
  explicit ScriptedSearch(const FixtureStore& store) : store_(store) {}
  std::string search(const std::string& query, const std::string& sample_id) override;

 private:
  const FixtureStore& store_;
};

class ScriptedForgery final : public ForgeryService {
 public:
  explicit ScriptedForgery(const FixtureStore& store) : store_(store) {}
  double detect(const ImageRef& image, const std::string& sample_id) override;

 private:
  const FixtureStore& store_;
};

}  // namespace m3d
