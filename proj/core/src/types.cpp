// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/types.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>

#include "m3d/errors.hpp"

namespace m3d {
namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

}  // namespace

int label_code(Label label) noexcept { return static_cast<int>(label); }

std::string_view label_name(Label label) noexcept {
  switch (label) {
    case Label::Original: return "Original";
    case Label::TVD: return "TVD";
    case Label::VVD: return "VVD";
    case Label::CMM: return "CMM";
  }
  return "Original";
}

Label label_from_code(int code) {
  if (code < 0 || code > 3) {
    throw ContractViolation("label code out of range: " + std::to_string(code));
  }
  return static_cast<Label>(code);
}

std::optional<Label> parse_label(std::string_view name) {
  for (Label l : kAllLabels) {
    if (iequals(name, label_name(l))) return l;
  }
  return std::nullopt;
}

std::string_view stage_name(Stage stage) noexcept {
  switch (stage) {
    case Stage::Text: return "text";
    case Stage::Image: return "image";
    case Stage::Cross: return "cross";
  }
  return "text";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (Stage s : kCascadeOrder) {
    if (iequals(name, stage_name(s))) return s;
  }
  return std::nullopt;
}

std::string_view plan_level_name(PlanLevel level) noexcept {
  return level == PlanLevel::Level0 ? "Level0" : "Level1";
}

std::optional<PlanLevel> parse_plan_level(std::string_view name) {
  if (iequals(name, "Level0")) return PlanLevel::Level0;
  if (iequals(name, "Level1")) return PlanLevel::Level1;
  return std::nullopt;
}

std::string_view stage_mode_name(StageMode mode) noexcept {
  return mode == StageMode::Standard ? "Standard" : "BoN";
}

std::optional<StageMode> parse_stage_mode(std::string_view name) {
  if (iequals(name, "Standard")) return StageMode::Standard;
  if (iequals(name, "BoN")) return StageMode::BoN;
  return std::nullopt;
}

ImageRef ImageRef::from_string(std::string value) {
  ImageRef ref;
  if (value.empty()) return ref;
  if (starts_with_ci(value, "http://") || starts_with_ci(value, "https://")) {
    ref.kind = Kind::Url;
  } else if (starts_with_ci(value, "data:") || starts_with_ci(value, "base64:")) {
    ref.kind = Kind::Base64;
  } else {
    ref.kind = Kind::Path;
  }
  ref.value = std::move(value);
  return ref;
}

bool ImageRef::resolvable() const {
  switch (kind) {
    case Kind::Absent: return false;
    case Kind::Url:
    case Kind::Base64: return !value.empty();
    case Kind::Path: {
      std::error_code ec;
      return std::filesystem::is_regular_file(value, ec);
    }
  }
  return false;
}

void Sample::validate() const {
  if (id.empty()) throw InputError("sample id must be non-empty");
  if (text.empty()) throw InputError("sample '" + id + "' has empty text");
}

CallCounts& CallCounts::operator+=(const CallCounts& o) noexcept {
  chat_calls += o.chat_calls;
  tool_calls += o.tool_calls;
  reward_calls += o.reward_calls;
  critique_calls += o.critique_calls;
  retry_calls += o.retry_calls;
  candidates_generated += o.candidates_generated;
  return *this;
}

bool CallCounts::is_zero() const noexcept { return *this == CallCounts{}; }

CallCounts CostLedger::total() const noexcept {
  CallCounts sum = planner;
  for (const auto& s : stages) sum += s;
  return sum;
}

const StageTrace* PipelineTrace::find_stage(Stage stage) const noexcept {
  for (const auto& st : stage_traces) {
    if (st.stage == stage) return &st;
  }
  return nullptr;
}

int distortion_indicator(const Verdict& verdict) noexcept { return verdict.is_distorted ? 1 : 0; }

int ActivationFlags::operator[](Stage stage) const noexcept {
  switch (stage) {
    case Stage::Text: return text;
    case Stage::Image: return image;
    case Stage::Cross: return cross;
  }
  return 0;
}

ActivationFlags activation_flags(const std::optional<Verdict>& text_verdict,
                                 const std::optional<Verdict>& image_verdict) {
  ActivationFlags flags;
  flags.text = 1;
  // A missing upstream verdict means the upstream stage did not complete,
  // so nothing downstream may run.
  flags.image = text_verdict ? 1 - distortion_indicator(*text_verdict) : 0;
  if (image_verdict && flags.image == 0) {
    throw ContractViolation("image verdict supplied although the image stage is inactive");
  }
  flags.cross = image_verdict ? flags.image * (1 - distortion_indicator(*image_verdict)) : 0;
  return flags;
}

Label assemble_final_label(std::span<const Verdict> stage_verdicts) {
  if (stage_verdicts.empty()) {
    throw ContractViolation("assemble_final_label: the text stage always runs");
  }
  for (std::size_t i = 0; i < stage_verdicts.size(); ++i) {
    if (stage_verdicts[i].stage != kCascadeOrder[i]) {
      throw ContractViolation("assemble_final_label: verdicts out of cascade order");
    }
    if (stage_verdicts[i].is_distorted) {
      if (i + 1 != stage_verdicts.size()) {
        throw ContractViolation("assemble_final_label: verdict after a distorted stage");
      }
      switch (stage_verdicts[i].stage) {
        case Stage::Text: return Label::TVD;
        case Stage::Image: return Label::VVD;
        case Stage::Cross: return Label::CMM;
      }
    }
  }
  return Label::Original;
}

}  // namespace m3d
