// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixture_builder.hpp"

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <nlohmann/json.hpp>

namespace m3d::testkit {

std::optional<Stage> distorted_stage(Label label) {
  switch (label) {
    case Label::TVD: return Stage::Text;
    case Label::VVD: return Stage::Image;
    case Label::CMM: return Stage::Cross;
    case Label::Original: break;
  }
  return std::nullopt;
}

std::string verdict_reply(bool distorted, const std::string& reasoning) {
  nlohmann::ordered_json j;
  j["verdict"] = distorted ? "distorted" : "original";
  j["reasoning"] = reasoning;
  return j.dump();
}

std::string plan_reply(PlanLevel level) {
  return level == PlanLevel::Level1 ? "[BON level-1]" : "[BON level-0]";
}

namespace {

const char* detect_role(Stage s) {
  switch (s) {
    case Stage::Text: return roles::kTextDetect;
    case Stage::Image: return roles::kImageDetect;
    case Stage::Cross: return roles::kCrossDetect;
  }
  return "";
}

std::string number(double v) { return nlohmann::json(v).dump(); }

}  // namespace

Sample script_sample(FixtureStore& store, const std::string& id, Label label,
                     const ScriptOptions& o) {
  Sample s;
  s.id = id;
  s.text = "Claim " + id + ": officials opened the new bridge on Monday.";
  if (o.with_image) s.image = ImageRef::from_string("https://img.test/" + id + ".jpg");
  s.gold_label = label;

  store.add_chat(roles::kPlanner, id, 0, plan_reply(o.plan));
  store.add_chat(roles::kLogicCheck, id, 0, "No internal contradictions in " + id + ".");
  store.add_chat(roles::kImageAnalyze, id, 0, "A bridge with a crowd, daylight (" + id + ").");
  FixtureStore::ToolRecord web;
  web.content = "Encyclopedia: bridge records for " + id + ".";
  store.add_tool(ToolId::WebSearch, id, web);
  FixtureStore::ToolRecord forged;
  forged.score = 0.2;
  store.add_tool(ToolId::ForgeryDetect, id, forged);

  const auto bad = distorted_stage(label);
  for (Stage st : kCascadeOrder) {
    const bool distorted = bad && *bad == st;
    for (int i = 0; i < o.n; ++i) {
      store.add_chat(detect_role(st), id, i,
                     verdict_reply(distorted, std::string(stage_name(st)) + " reasoning " +
                                                  std::to_string(i)));
      store.add_reward(id, st, i, o.reward ? o.reward(st, i) : 1.0 - 0.1 * i);
      if (st == Stage::Text) {
        store.add_chat(roles::kTextCritique, id, i, number(o.critique ? o.critique(st, i) : 0.5));
      } else if (st == Stage::Image) {
        store.add_chat(roles::kImageCritique, id, i, number(o.critique ? o.critique(st, i) : 0.5));
      }
    }
  }
  return s;
}

std::vector<Sample> conformance_suite(FixtureStore& store, const ScriptOptions& options) {
  std::vector<Sample> out;
  for (Label l : kAllLabels) {
    for (int k = 0; k < 3; ++k) {
      out.push_back(script_sample(store, "c" + std::string(label_name(l)) + "-" + std::to_string(k),
                                  l, options));
    }
  }
  return out;
}

std::vector<Sample> random_suite(FixtureStore& store, int count, std::uint64_t seed,
                                 const ScriptOptions& base) {
  std::vector<Sample> out;
  std::mt19937_64 rng(seed);
  for (int k = 0; k < count; ++k) {
    std::vector<double> rewards(static_cast<std::size_t>(3 * base.n));
    std::vector<double> critiques(rewards.size());
    for (auto& r : rewards) r = static_cast<double>(rng() % 2001) / 1000.0 - 1.0;
    for (auto& q : critiques) q = static_cast<double>(rng() % 11) / 10.0;
    ScriptOptions o = base;
    const auto n = base.n;
    o.reward = [rewards, n](Stage s, int i) { return rewards[stage_slot(s) * n + i]; };
    o.critique = [critiques, n](Stage s, int i) { return critiques[stage_slot(s) * n + i]; };
    const Label l = kAllLabels[static_cast<std::size_t>(k) % 4];
    out.push_back(script_sample(store, "r" + std::to_string(k), l, o));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["text"] = s.text;
    if (s.image.present()) j["image"] = s.image.value;
    if (s.gold_label) j["label"] = std::string(label_name(*s.gold_label));
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write_dataset failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("m3d-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace m3d::testkit
