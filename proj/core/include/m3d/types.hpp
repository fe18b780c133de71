// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m3d {

// ---------------------------------------------------------------------------
// Labels and stages
// ---------------------------------------------------------------------------

/// Four-way label space. Integer codes are part of the serialized format.
enum class Label : int { Original = 0, TVD = 1, VVD = 2, CMM = 3 };

inline constexpr std::array<Label, 4> kAllLabels = {Label::Original, Label::TVD, Label::VVD,
                                                    Label::CMM};

int label_code(Label label) noexcept;
std::string_view label_name(Label label) noexcept;
/// Throws ContractViolation for codes outside 0..3.
Label label_from_code(int code);
/// Case-insensitive; accepts "original", "tvd", "vvd", "cmm".
std::optional<Label> parse_label(std::string_view name);

enum class Stage : int { Text = 0, Image = 1, Cross = 2 };

inline constexpr std::array<Stage, 3> kCascadeOrder = {Stage::Text, Stage::Image, Stage::Cross};

std::string_view stage_name(Stage stage) noexcept;
std::optional<Stage> parse_stage(std::string_view name);
inline constexpr std::size_t stage_slot(Stage stage) noexcept {
  return static_cast<std::size_t>(stage);
}

enum class PlanLevel : int { Level0 = 0, Level1 = 1 };
std::string_view plan_level_name(PlanLevel level) noexcept;
std::optional<PlanLevel> parse_plan_level(std::string_view name);

enum class StageMode : int { Standard = 0, BoN = 1 };
std::string_view stage_mode_name(StageMode mode) noexcept;
std::optional<StageMode> parse_stage_mode(std::string_view name);

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Image locator. The payload is only decoded when a backend request is built.
struct ImageRef {
  enum class Kind { Absent, Path, Url, Base64 };

  Kind kind = Kind::Absent;
  std::string value;

  /// Classifies a raw locator string: empty -> Absent, http(s):// -> Url,
  /// data: URI or "base64:" prefix -> Base64, anything else -> Path.
  static ImageRef from_string(std::string value);

  bool present() const noexcept { return kind != Kind::Absent; }
  /// Paths must name an existing regular file; URLs and inline data are
  /// taken at face value.
  bool resolvable() const;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct Sample {
  std::string id;
  std::string text;
  ImageRef image;
  std::optional<Label> gold_label;

  /// Throws InputError if id or text is empty.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Stage outputs
// ---------------------------------------------------------------------------

struct Verdict {
  Stage stage = Stage::Text;
  bool is_distorted = false;
  std::string reasoning;
  std::string raw_response;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// One Best-of-N trial. Scoring fields are absent for Standard-mode
/// candidates, which never reach the reward model.
struct Candidate {
  int index = 0;
  Verdict verdict;
  std::optional<double> reward_raw;
  std::optional<double> reward_norm;
  std::optional<double> critique;
  std::optional<double> fused;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct StageTrace {
  Stage stage = Stage::Text;
  bool activated = false;
  StageMode mode = StageMode::Standard;
  std::vector<Candidate> candidates;
  std::optional<int> selected_index;
  std::optional<int> stopping_prefix;
  std::optional<Verdict> verdict;

  friend bool operator==(const StageTrace&, const StageTrace&) = default;
};

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

/// Logical call counters. Transport retries never show up here; a semantic
/// re-ask (format reminder) is a new chat call and is also tallied in
/// retry_calls.
struct CallCounts {
  std::int64_t chat_calls = 0;
  std::int64_t tool_calls = 0;
  std::int64_t reward_calls = 0;
  std::int64_t critique_calls = 0;
  std::int64_t retry_calls = 0;
  std::int64_t candidates_generated = 0;

  CallCounts& operator+=(const CallCounts& other) noexcept;
  bool is_zero() const noexcept;
  friend bool operator==(const CallCounts&, const CallCounts&) = default;
};

struct CostLedger {
  CallCounts planner;
  std::array<CallCounts, 3> stages{};

  CallCounts& stage(Stage s) noexcept { return stages[stage_slot(s)]; }
  const CallCounts& stage(Stage s) const noexcept { return stages[stage_slot(s)]; }
  CallCounts total() const noexcept;

  friend bool operator==(const CostLedger&, const CostLedger&) = default;
};

// ---------------------------------------------------------------------------
// Whole-sample trace
// ---------------------------------------------------------------------------

enum class TraceStatus : int { Ok = 0, Failed = 1 };

struct PipelineTrace {
  std::string sample_id;
  TraceStatus status = TraceStatus::Ok;
  std::optional<std::string> error;
  std::optional<PlanLevel> plan_level;
  bool planner_ran = false;
  std::vector<StageTrace> stage_traces;
  std::optional<Label> final_label;
  CostLedger cost;
  std::int64_t wall_time_ms = 0;
  std::vector<std::string> warnings;
  std::string config_echo;  // serialized effective configuration (JSON text)

  const StageTrace* find_stage(Stage stage) const noexcept;

  friend bool operator==(const PipelineTrace&, const PipelineTrace&) = default;
};

// ---------------------------------------------------------------------------
// Cascade algebra
// ---------------------------------------------------------------------------

/// 1 iff the verdict reports a distortion.
int distortion_indicator(const Verdict& verdict) noexcept;

struct ActivationFlags {
  int text = 1;
  int image = 0;
  int cross = 0;

  int operator[](Stage stage) const noexcept;
  friend bool operator==(const ActivationFlags&, const ActivationFlags&) = default;
};

/// Cascade activation given upstream verdicts. Absent verdicts are treated
/// as "stage did not run". Supplying an image verdict when the image stage
/// would be inactive throws ContractViolation.
ActivationFlags activation_flags(const std::optional<Verdict>& text_verdict,
                                 const std::optional<Verdict>& image_verdict);

/// Maps the first distorted verdict to its label (Text->TVD, Image->VVD,
/// Cross->CMM); Original when nothing is distorted. Verdicts must be the
/// activated stages in cascade order.
Label assemble_final_label(std::span<const Verdict> stage_verdicts);

}  // namespace m3d
