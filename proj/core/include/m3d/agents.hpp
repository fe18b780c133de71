// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "m3d/backends.hpp"
#include "m3d/meter.hpp"
#include "m3d/tools.hpp"
#include "m3d/types.hpp"

namespace m3d {

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace placeholders {
inline constexpr const char* kNewsCaption = "news_caption";
inline constexpr const char* kToolResult = "tool_result";
inline constexpr const char* kDetectionResult = "detection_result";
inline constexpr const char* kImageDescription = "image_description";
}  // namespace placeholders

namespace template_ids {
inline constexpr const char* kTextDetect = "text_detect";
inline constexpr const char* kImageDetect = "image_detect";
inline constexpr const char* kCrossDetect = "cross_detect";
inline constexpr const char* kPlanner = "planner";
inline constexpr const char* kTextCritique = "text_critique";
inline constexpr const char* kImageCritique = "image_critique";
}  // namespace template_ids

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Body text with `{name}` placeholders for the four known names. Other
/// brace sequences (e.g. JSON examples) are left untouched.
struct PromptTemplate {
  std::string id;
  std::string body;
  std::set<std::string, std::less<>> required;

  /// Single pass: bound values are inserted verbatim and never re-expanded.
  /// Unbound optional placeholders render empty; an unbound required one
  /// throws TemplateError.
  std::string render(const Bindings& bindings) const;
};

/// The six agent templates. Defaults are embedded; `load_overrides` replaces
/// any template for which `<dir>/<id>.txt` exists.
class PromptLibrary {
 public:
  PromptLibrary();
  static PromptLibrary with_overrides(const std::filesystem::path& dir);

  const PromptTemplate& get(std::string_view id) const;

 private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

extern const char* const kVerdictFormatInstruction;
extern const char* const kVerdictFormatReminder;
extern const char* const kPlanFormatReminder;
extern const char* const kScoreFormatReminder;
extern const char* const kToolUnavailableText;

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Accepts either a JSON record {"verdict": "distorted"|"original",
/// "reasoning": str} (optionally embedded in surrounding text or a code
/// fence) or the line grammar "VERDICT: <v>" / "REASONING: <text>".
/// Throws ParseError when neither matches.
Verdict parse_verdict(std::string_view raw, Stage stage);

/// Inverse of parse_verdict's JSON grammar.
std::string render_verdict_json(const Verdict& verdict);
/// Compact "VERDICT: ...\nREASONING: ..." text used inside critique prompts.
std::string render_verdict_plain(const Verdict& verdict);

/// "[BON level-n]" with n in {0,1}; case-insensitive, surrounding
/// whitespace allowed, nothing else.
std::optional<PlanLevel> parse_plan(std::string_view raw);

/// Exactly one real number in the reply, clamped to [0,1].
std::optional<double> parse_critique_score(std::string_view raw);

// ---------------------------------------------------------------------------
// Agent runners
// ---------------------------------------------------------------------------

class AgentParseError : public std::runtime_error {
 public:
  AgentParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_response(std::move(raw)) {}
  std::string raw_response;
};

struct AgentContext {
  ChatBackend& chat;
  Meter& meter;
  const PromptLibrary& prompts;
};

struct CallOptions {
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  int candidate_index = 0;
  int max_tokens = 1024;
};

struct TextAgentInput {
  const Sample& sample;
  const ToolObservation& evidence;  // web search
};

struct ImageAgentInput {
  const Sample& sample;
  const ToolObservation& analysis;  // image analysis
};

/// The cross agent sees the claim and the grounded image description only.
struct CrossAgentInput {
  const Sample& sample;
  const ToolObservation& image_description;
};

std::string render_tool_result(const ToolObservation& obs);

/// Each runner renders its template, calls chat, and parses the verdict,
/// re-asking once with a format reminder. Throws AgentParseError after the
/// second failure; backend errors propagate.
Verdict run_text_agent(const TextAgentInput& in, const AgentContext& ctx, const CallOptions& opts);
Verdict run_image_agent(const ImageAgentInput& in, const AgentContext& ctx, const CallOptions& opts);
Verdict run_cross_agent(const CrossAgentInput& in, const AgentContext& ctx, const CallOptions& opts);

/// Prompt text as sent to the backend (exposed for inspection in tests).
std::string render_text_prompt(const TextAgentInput& in, const PromptLibrary& prompts);
std::string render_image_prompt(const ImageAgentInput& in, const PromptLibrary& prompts);
std::string render_cross_prompt(const CrossAgentInput& in, const PromptLibrary& prompts);

struct PlanDecision {
  PlanLevel level = PlanLevel::Level0;
  std::string raw_response;
  std::optional<std::string> warning;
};

/// Never throws on bad replies or backend failures: falls back to
/// `fallback` and sets `warning`.
PlanDecision run_planner(const Sample& sample, const AgentContext& ctx, const CallOptions& opts,
                         PlanLevel fallback = PlanLevel::Level0);

struct CritiqueResult {
  double score = 0.5;
  std::string raw_response;
  std::optional<std::string> warning;
};

inline constexpr double kNeutralCritique = 0.5;

/// Score in [0,1]. Unparseable replies (after one re-ask) and backend
/// failures yield the neutral 0.5 with a warning.
CritiqueResult run_text_critique(const Sample& sample, const Verdict& verdict,
                                 const ToolObservation& logic, const AgentContext& ctx,
                                 const CallOptions& opts);
CritiqueResult run_image_critique(const Sample& sample, const Verdict& verdict,
                                  const ToolObservation& forgery, const AgentContext& ctx,
                                  const CallOptions& opts);

}  // namespace m3d
