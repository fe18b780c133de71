// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/mock.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3d/errors.hpp"

namespace m3d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string where(const fs::path& file, std::size_t line) {
  return file.filename().string() + ":" + std::to_string(line);
}

}  // namespace

void FixtureStore::add_chat(std::string role, std::string sample_id, int candidate_index,
                            std::string response) {
  ChatKey key{std::move(role), std::move(sample_id), candidate_index};
  if (!chat_.emplace(key, std::move(response)).second) {
    throw InputError("duplicate chat fixture for (" + std::get<0>(key) + ", " + std::get<1>(key) +
                     ", " + std::to_string(candidate_index) + ")");
  }
}

void FixtureStore::add_reward(std::string sample_id, Stage stage, int candidate_index, double score) {
  RewardKey key{std::move(sample_id), static_cast<int>(stage), candidate_index};
  if (!reward_.emplace(key, score).second) {
    throw InputError("duplicate reward fixture for (" + std::get<0>(key) + ", " +
                     std::string(stage_name(stage)) + ", " + std::to_string(candidate_index) + ")");
  }
}

void FixtureStore::add_tool(ToolId tool, std::string sample_id, ToolRecord record) {
  ToolKey key{static_cast<int>(tool), std::move(sample_id)};
  if (!tools_.emplace(key, std::move(record)).second) {
    throw InputError("duplicate tool fixture for (" + std::string(tool_name(tool)) + ", " +
                     key.second + ")");
  }
}

const std::string* FixtureStore::find_chat(const std::string& role, const std::string& sample_id,
                                           int candidate_index) const {
  auto it = chat_.find(ChatKey{role, sample_id, candidate_index});
  return it == chat_.end() ? nullptr : &it->second;
}

std::optional<double> FixtureStore::find_reward(const std::string& sample_id, Stage stage,
                                                int candidate_index) const {
  auto it = reward_.find(RewardKey{sample_id, static_cast<int>(stage), candidate_index});
  if (it == reward_.end()) return std::nullopt;
  return it->second;
}

const FixtureStore::ToolRecord* FixtureStore::find_tool(ToolId tool,
                                                        const std::string& sample_id) const {
  auto it = tools_.find(ToolKey{static_cast<int>(tool), sample_id});
  return it == tools_.end() ? nullptr : &it->second;
}

FixtureStore FixtureStore::load_directory(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw InputError("fixture directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  FixtureStore store;
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) {
        throw InputError(where(file, lineno) + ": not a JSON object");
      }
      try {
        const auto sample_id = rec.at("sample_id").get<std::string>();
        if (rec.contains("role")) {
          store.add_chat(rec.at("role").get<std::string>(), sample_id,
                         rec.value("candidate_index", 0), rec.at("response").get<std::string>());
        } else if (rec.contains("tool")) {
          auto tool = parse_tool(rec.at("tool").get<std::string>());
          if (!tool) throw InputError("unknown tool '" + rec["tool"].get<std::string>() + "'");
          ToolRecord tr;
          if (rec.contains("content")) tr.content = rec["content"].get<std::string>();
          if (rec.contains("score")) tr.score = rec["score"].get<double>();
          tr.unavailable = rec.value("unavailable", false);
          store.add_tool(*tool, sample_id, std::move(tr));
        } else if (rec.contains("stage")) {
          auto stage = parse_stage(rec.at("stage").get<std::string>());
          if (!stage) throw InputError("unknown stage '" + rec["stage"].get<std::string>() + "'");
          store.add_reward(sample_id, *stage, rec.value("candidate_index", 0),
                           rec.at("score").get<double>());
        } else {
          throw InputError("record is neither chat, reward nor tool");
        }
      } catch (const json::exception& e) {
        throw InputError(where(file, lineno) + ": " + e.what());
      } catch (const InputError& e) {
        throw InputError(where(file, lineno) + ": " + e.what());
      }
    }
  }
  return store;
}

void FixtureStore::save_directory(const fs::path& dir) const {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "chat.jsonl");
    for (const auto& [key, response] : chat_) {
      nlohmann::ordered_json j;
      j["role"] = std::get<0>(key);
      j["sample_id"] = std::get<1>(key);
      j["candidate_index"] = std::get<2>(key);
      j["response"] = response;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "reward.jsonl");
    for (const auto& [key, score] : reward_) {
      nlohmann::ordered_json j;
      j["sample_id"] = std::get<0>(key);
      j["stage"] = std::string(stage_name(static_cast<Stage>(std::get<1>(key))));
      j["candidate_index"] = std::get<2>(key);
      j["score"] = score;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "tools.jsonl");
    for (const auto& [key, rec] : tools_) {
      nlohmann::ordered_json j;
      j["tool"] = std::string(tool_name(static_cast<ToolId>(key.first)));
      j["sample_id"] = key.second;
      if (rec.content) j["content"] = *rec.content;
      if (rec.score) j["score"] = *rec.score;
      if (rec.unavailable) j["unavailable"] = true;
      out << j.dump() << '\n';
    }
  }
}

ChatResponse ScriptedChat::chat(const ChatRequest& request) {
  request.validate();
  calls_.fetch_add(1, std::memory_order_relaxed);
  const int idx = request.candidate_index.value_or(0);
  const auto* text = store_.find_chat(request.role_tag, request.sample_id, idx);
  if (!text) {
    throw MissingFixture("no chat fixture for (" + request.role_tag + ", " + request.sample_id +
                         ", " + std::to_string(idx) + ")");
  }
  return ChatResponse{*text, std::nullopt, 0};
}

double ScriptedReward::score_reward(const RewardRequest& request) {
  request.validate();
  calls_.fetch_add(1, std::memory_order_relaxed);
  auto score = store_.find_reward(request.sample_id, request.stage, request.candidate_index);
  if (!score) {
    throw MissingFixture("no reward fixture for (" + request.sample_id + ", " +
                         std::string(stage_name(request.stage)) + ", " +
                         std::to_string(request.candidate_index) + ")");
  }
  return *score;
}

std::string ScriptedSearch::search(const std::string&, const std::string& sample_id) {
  const auto* rec = store_.find_tool(ToolId::WebSearch, sample_id);
  if (!rec) throw MissingFixture("no web_search fixture for " + sample_id);
  if (rec->unavailable || !rec->content) throw TransportError("scripted web_search outage");
  return *rec->content;
}

double ScriptedForgery::detect(const ImageRef&, const std::string& sample_id) {
  const auto* rec = store_.find_tool(ToolId::ForgeryDetect, sample_id);
  if (!rec) throw MissingFixture("no forgery_detect fixture for " + sample_id);
  if (rec->unavailable || !rec->score) throw TransportError("scripted forgery_detect outage");
  return *rec->score;
}

}  // namespace m3d
