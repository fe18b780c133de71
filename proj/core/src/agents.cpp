// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/agents.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <regex>

#include <nlohmann/json.hpp>

#include "m3d/errors.hpp"

namespace m3d {
namespace {

bool is_placeholder_name(std::string_view name) {
  using namespace placeholders;
  return name == kNewsCaption || name == kToolResult || name == kDetectionResult ||
         name == kImageDescription;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::optional<bool> parse_distorted_word(std::string_view word) {
  const auto w = lower(trim(word));
  if (w == "distorted") return true;
  if (w == "original") return false;
  return std::nullopt;
}

std::optional<Verdict> parse_json_verdict(std::string_view raw, Stage stage) {
  const auto open = raw.find('{');
  const auto close = raw.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    return std::nullopt;
  }
  auto doc = nlohmann::json::parse(raw.substr(open, close - open + 1), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  auto v = doc.find("verdict");
  auto r = doc.find("reasoning");
  if (v == doc.end() || r == doc.end() || !v->is_string() || !r->is_string()) return std::nullopt;
  auto distorted = parse_distorted_word(v->get<std::string>());
  auto reasoning = r->get<std::string>();
  if (!distorted || trim(reasoning).empty()) return std::nullopt;
  return Verdict{stage, *distorted, std::move(reasoning), std::string(raw)};
}

std::optional<Verdict> parse_line_verdict(std::string_view raw, Stage stage) {
  static const std::regex kVerdictLine(R"((?:^|\n)[ \t]*verdict[ \t]*:[ \t]*([A-Za-z]+))",
                                       std::regex::icase);
  static const std::regex kReasoningLine(R"((?:^|\n)[ \t]*reasoning[ \t]*:)", std::regex::icase);
  const std::string text(raw);
  std::smatch vm;
  if (!std::regex_search(text, vm, kVerdictLine)) return std::nullopt;
  auto distorted = parse_distorted_word(vm[1].str());
  if (!distorted) return std::nullopt;
  std::smatch rm;
  if (!std::regex_search(text, rm, kReasoningLine)) return std::nullopt;
  // Reasoning runs to the end of the reply, or to a later VERDICT line.
  std::string rest = text.substr(static_cast<std::size_t>(rm.position(0) + rm.length(0)));
  std::smatch later;
  if (std::regex_search(rest, later, kVerdictLine)) rest.resize(static_cast<std::size_t>(later.position(0)));
  auto reasoning = std::string(trim(rest));
  if (reasoning.empty()) return std::nullopt;
  return Verdict{stage, *distorted, std::move(reasoning), std::string(raw)};
}

ChatRequest base_request(const char* role, const Sample& sample, const CallOptions& opts) {
  ChatRequest req;
  req.role_tag = role;
  req.sample_id = sample.id;
  req.temperature = opts.temperature;
  req.seed = opts.seed;
  req.max_tokens = opts.max_tokens;
  req.candidate_index = opts.candidate_index;
  return req;
}

ChatResponse send(const AgentContext& ctx, const ChatRequest& req, bool retry) {
  ctx.meter.chat();
  if (retry) ctx.meter.retry();
  return ctx.chat.chat(req);
}

/// Shared detection loop: first attempt with the format instruction, one
/// re-ask with the reminder.
Verdict run_detection(const char* role, Stage stage, const Sample& sample, std::string prompt,
                      bool attach_image, const AgentContext& ctx, const CallOptions& opts) {
  std::string last_raw;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatRequest req = base_request(role, sample, opts);
    std::string text = prompt + kVerdictFormatInstruction;
    if (attempt > 0) text += kVerdictFormatReminder;
    req.messages.push_back(MessagePart::of_text(std::move(text)));
    if (attach_image) req.messages.push_back(MessagePart::of_image(sample.image));
    auto reply = send(ctx, req, attempt > 0);
    try {
      return parse_verdict(reply.text, stage);
    } catch (const ParseError&) {
      last_raw = std::move(reply.text);
    }
  }
  throw AgentParseError(std::string(stage_name(stage)) + " agent reply unparseable after retry for " +
                            sample.id,
                        std::move(last_raw));
}

void require_image(const Sample& sample, Stage stage) {
  if (!sample.image.resolvable()) {
    throw InputError("sample '" + sample.id + "': " + std::string(stage_name(stage)) +
                     " stage requires a resolvable image");
  }
}

CritiqueResult run_critique(const char* role, const char* template_id, Stage expected,
                            const Sample& sample, const Verdict& verdict,
                            const ToolObservation& obs, bool attach_image, const AgentContext& ctx,
                            const CallOptions& opts) {
  if (verdict.stage != expected) {
    throw ContractViolation(std::string(role) + " received a " +
                            std::string(stage_name(verdict.stage)) + " verdict");
  }
  const std::string prompt = ctx.prompts.get(template_id).render({
      {placeholders::kNewsCaption, sample.text},
      {placeholders::kDetectionResult, render_verdict_plain(verdict)},
      {placeholders::kToolResult, render_tool_result(obs)},
  });
  ctx.meter.critique();
  CritiqueResult result;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatRequest req = base_request(role, sample, opts);
    req.messages.push_back(MessagePart::of_text(attempt == 0 ? prompt : prompt + kScoreFormatReminder));
    if (attach_image && sample.image.present()) req.messages.push_back(MessagePart::of_image(sample.image));
    try {
      auto reply = send(ctx, req, attempt > 0);
      result.raw_response = reply.text;
      if (auto score = parse_critique_score(reply.text)) {
        result.score = *score;
        return result;
      }
    } catch (const BackendError& e) {
      result.score = kNeutralCritique;
      result.warning = std::string(role) + " backend failure for " + sample.id + " candidate " +
                       std::to_string(opts.candidate_index) + "; using neutral score: " + e.what();
      return result;
    }
  }
  result.score = kNeutralCritique;
  result.warning = std::string(role) + " reply unparseable for " + sample.id + " candidate " +
                   std::to_string(opts.candidate_index) + "; using neutral score";
  return result;
}

}  // namespace

std::string PromptTemplate::render(const Bindings& bindings) const {
  std::string out;
  out.reserve(body.size() + 256);
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      const auto close = body.find('}', i + 1);
      if (close != std::string::npos) {
        const std::string_view name(body.data() + i + 1, close - i - 1);
        if (is_placeholder_name(name)) {
          if (auto it = bindings.find(name); it != bindings.end()) {
            out += it->second;
          } else if (required.count(name) != 0) {
            throw TemplateError("template '" + id + "': required placeholder {" +
                                std::string(name) + "} is unbound");
          }
          i = close + 1;
          continue;
        }
      }
    }
    out += body[i++];
  }
  return out;
}

Verdict parse_verdict(std::string_view raw, Stage stage) {
  if (trim(raw).empty()) throw ParseError("empty reply");
  if (auto v = parse_json_verdict(raw, stage)) return *std::move(v);
  if (auto v = parse_line_verdict(raw, stage)) return *std::move(v);
  throw ParseError("reply matches neither the JSON nor the VERDICT/REASONING grammar");
}

std::string render_verdict_json(const Verdict& verdict) {
  nlohmann::ordered_json j;
  j["verdict"] = verdict.is_distorted ? "distorted" : "original";
  j["reasoning"] = verdict.reasoning;
  return j.dump();
}

std::string render_verdict_plain(const Verdict& verdict) {
  return std::string("VERDICT: ") + (verdict.is_distorted ? "distorted" : "original") +
         "\nREASONING: " + verdict.reasoning;
}

std::optional<PlanLevel> parse_plan(std::string_view raw) {
  static const std::regex kPlan(R"(\[\s*bon\s+level\s*-\s*([0-9]+)\s*\])", std::regex::icase);
  const std::string text(trim(raw));
  std::smatch m;
  if (!std::regex_match(text, m, kPlan)) return std::nullopt;
  const auto n = m[1].str();
  if (n == "0") return PlanLevel::Level0;
  if (n == "1") return PlanLevel::Level1;
  return std::nullopt;
}

std::optional<double> parse_critique_score(std::string_view raw) {
  static const std::regex kNumber(R"([-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?)");
  const std::string text(raw);
  auto begin = std::sregex_iterator(text.begin(), text.end(), kNumber);
  auto end = std::sregex_iterator();
  if (begin == end || std::next(begin) != end) return std::nullopt;
  const auto token = begin->str();
  double value = 0.0;
  // from_chars rejects a leading '+'.
  const char* first = token.data() + (token.front() == '+' ? 1 : 0);
  auto [ptr, ec] = std::from_chars(first, token.data() + token.size(), value);
  if (ec != std::errc() || !std::isfinite(value)) return std::nullopt;
  return std::clamp(value, 0.0, 1.0);
}

std::string render_tool_result(const ToolObservation& obs) {
  return obs.ok() ? obs.content : std::string(kToolUnavailableText);
}

std::string render_text_prompt(const TextAgentInput& in, const PromptLibrary& prompts) {
  return prompts.get(template_ids::kTextDetect)
      .render({{placeholders::kNewsCaption, in.sample.text},
               {placeholders::kToolResult, render_tool_result(in.evidence)}});
}

std::string render_image_prompt(const ImageAgentInput& in, const PromptLibrary& prompts) {
  return prompts.get(template_ids::kImageDetect)
      .render({{placeholders::kNewsCaption, in.sample.text},
               {placeholders::kToolResult, render_tool_result(in.analysis)}});
}

std::string render_cross_prompt(const CrossAgentInput& in, const PromptLibrary& prompts) {
  return prompts.get(template_ids::kCrossDetect)
      .render({{placeholders::kNewsCaption, in.sample.text},
               {placeholders::kImageDescription, render_tool_result(in.image_description)}});
}

Verdict run_text_agent(const TextAgentInput& in, const AgentContext& ctx, const CallOptions& opts) {
  return run_detection(roles::kTextDetect, Stage::Text, in.sample,
                       render_text_prompt(in, ctx.prompts), false, ctx, opts);
}

Verdict run_image_agent(const ImageAgentInput& in, const AgentContext& ctx, const CallOptions& opts) {
  require_image(in.sample, Stage::Image);
  return run_detection(roles::kImageDetect, Stage::Image, in.sample,
                       render_image_prompt(in, ctx.prompts), true, ctx, opts);
}

Verdict run_cross_agent(const CrossAgentInput& in, const AgentContext& ctx, const CallOptions& opts) {
  require_image(in.sample, Stage::Cross);
  return run_detection(roles::kCrossDetect, Stage::Cross, in.sample,
                       render_cross_prompt(in, ctx.prompts), true, ctx, opts);
}

PlanDecision run_planner(const Sample& sample, const AgentContext& ctx, const CallOptions& opts,
                         PlanLevel fallback) {
  const std::string prompt =
      ctx.prompts.get(template_ids::kPlanner).render({{placeholders::kNewsCaption, sample.text}});
  PlanDecision decision;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatRequest req = base_request(roles::kPlanner, sample, opts);
    req.messages.push_back(MessagePart::of_text(attempt == 0 ? prompt : prompt + kPlanFormatReminder));
    if (sample.image.present()) req.messages.push_back(MessagePart::of_image(sample.image));
    try {
      auto reply = send(ctx, req, attempt > 0);
      decision.raw_response = reply.text;
      if (auto level = parse_plan(reply.text)) {
        decision.level = *level;
        return decision;
      }
    } catch (const BackendError& e) {
      decision.level = fallback;
      decision.warning = "planner backend failure for " + sample.id + "; falling back to " +
                         std::string(plan_level_name(fallback)) + ": " + e.what();
      return decision;
    }
  }
  decision.level = fallback;
  decision.warning = "planner reply unparseable for " + sample.id + "; falling back to " +
                     std::string(plan_level_name(fallback));
  return decision;
}

CritiqueResult run_text_critique(const Sample& sample, const Verdict& verdict,
                                 const ToolObservation& logic, const AgentContext& ctx,
                                 const CallOptions& opts) {
  return run_critique(roles::kTextCritique, template_ids::kTextCritique, Stage::Text, sample,
                      verdict, logic, false, ctx, opts);
}

CritiqueResult run_image_critique(const Sample& sample, const Verdict& verdict,
                                  const ToolObservation& forgery, const AgentContext& ctx,
                                  const CallOptions& opts) {
  return run_critique(roles::kImageCritique, template_ids::kImageCritique, Stage::Image, sample,
                      verdict, forgery, true, ctx, opts);
}

}  // namespace m3d
