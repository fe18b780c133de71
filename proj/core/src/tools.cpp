// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/tools.hpp"

#include <charconv>
#include <chrono>
#include <cmath>

#include "m3d/encoding.hpp"
#include "m3d/errors.hpp"

namespace m3d {
namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ms(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

ToolObservation unavailable(ToolId id, std::string diagnostic, std::int64_t latency = 0) {
  return ToolObservation{id, std::move(diagnostic), ToolStatus::Unavailable, latency};
}

std::string shortest(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc() ? std::string(buf, end) : std::to_string(x);
}

}  // namespace

const char* const kLogicCheckPrompt =
    "You are a logic consistency checker. Analyze whether the following news caption exhibits "
    "logical contradictions, internally inconsistent statements, or implausible reasoning. "
    "Report the problems you find, or state that the caption is logically consistent.\n\n"
    "News caption: ";

const char* const kImageAnalyzePrompt =
    "Describe the visual content of the attached image in grounded, factual detail: the main "
    "entities, people, objects, visible text, setting, and events. Do not speculate beyond what "
    "is visible.";

std::string_view tool_name(ToolId id) noexcept {
  switch (id) {
    case ToolId::WebSearch: return "web_search";
    case ToolId::LogicCheck: return "logic_check";
    case ToolId::ForgeryDetect: return "forgery_detect";
    case ToolId::ImageAnalyze: return "image_analyze";
  }
  return "web_search";
}

std::optional<ToolId> parse_tool(std::string_view name) {
  for (ToolId id : {ToolId::WebSearch, ToolId::LogicCheck, ToolId::ForgeryDetect,
                    ToolId::ImageAnalyze}) {
    if (name == tool_name(id)) return id;
  }
  return std::nullopt;
}

std::string format_forgery_summary(double score, double threshold) {
  return "manipulation_score=" + shortest(score) +
         "; verdict=" + (score >= threshold ? "likely-forged" : "likely-authentic");
}

Toolset::Toolset(SearchService& search, ForgeryService& forgery, ChatBackend& chat,
                 ToolsetOptions options)
    : search_(search), forgery_(forgery), chat_(chat), options_(options) {}

ToolObservation Toolset::web_search(const std::string& sample_id, const std::string& query) const {
  if (query.empty()) throw ContractViolation("web_search: empty query");
  const auto start = Clock::now();
  try {
    std::string text = search_.search(query, sample_id);
    if (text.empty()) return unavailable(ToolId::WebSearch, "no search results", elapsed_ms(start));
    return {ToolId::WebSearch, truncate_with_marker(std::move(text), options_.char_cap),
            ToolStatus::Ok, elapsed_ms(start)};
  } catch (const BackendError& e) {
    return unavailable(ToolId::WebSearch, e.what(), elapsed_ms(start));
  }
}

ToolObservation Toolset::logic_check(const std::string& sample_id, const std::string& claim,
                                     Meter& meter) const {
  if (claim.empty()) throw ContractViolation("logic_check: empty claim");
  ChatRequest req;
  req.role_tag = roles::kLogicCheck;
  req.sample_id = sample_id;
  req.messages.push_back(MessagePart::of_text(std::string(kLogicCheckPrompt) + claim));
  req.temperature = 0.0;
  req.max_tokens = options_.max_tokens;
  req.candidate_index = 0;
  const auto start = Clock::now();
  meter.chat();
  try {
    auto reply = chat_.chat(req);
    if (reply.text.empty()) return unavailable(ToolId::LogicCheck, "empty reply", elapsed_ms(start));
    return {ToolId::LogicCheck, truncate_with_marker(std::move(reply.text), options_.char_cap),
            ToolStatus::Ok, elapsed_ms(start)};
  } catch (const BackendError& e) {
    return unavailable(ToolId::LogicCheck, e.what(), elapsed_ms(start));
  }
}

ToolObservation Toolset::forgery_detect(const std::string& sample_id, const ImageRef& image) const {
  if (!image.resolvable()) throw InputError("forgery_detect: image not resolvable for " + sample_id);
  const auto start = Clock::now();
  try {
    const double score = forgery_.detect(image, sample_id);
    if (!(score >= 0.0 && score <= 1.0)) {
      return unavailable(ToolId::ForgeryDetect, "detector score outside [0,1]", elapsed_ms(start));
    }
    return {ToolId::ForgeryDetect, format_forgery_summary(score, options_.forgery_threshold),
            ToolStatus::Ok, elapsed_ms(start)};
  } catch (const BackendError& e) {
    return unavailable(ToolId::ForgeryDetect, e.what(), elapsed_ms(start));
  }
}

ToolObservation Toolset::image_analyze(const std::string& sample_id, const ImageRef& image,
                                       Meter& meter) const {
  if (!image.resolvable()) throw InputError("image_analyze: image not resolvable for " + sample_id);
  ChatRequest req;
  req.role_tag = roles::kImageAnalyze;
  req.sample_id = sample_id;
  req.messages.push_back(MessagePart::of_text(kImageAnalyzePrompt));
  req.messages.push_back(MessagePart::of_image(image));
  req.temperature = 0.0;
  req.max_tokens = options_.max_tokens;
  req.candidate_index = 0;
  const auto start = Clock::now();
  meter.chat();
  try {
    auto reply = chat_.chat(req);
    if (reply.text.empty()) return unavailable(ToolId::ImageAnalyze, "empty reply", elapsed_ms(start));
    return {ToolId::ImageAnalyze, truncate_with_marker(std::move(reply.text), options_.char_cap),
            ToolStatus::Ok, elapsed_ms(start)};
  } catch (const BackendError& e) {
    return unavailable(ToolId::ImageAnalyze, e.what(), elapsed_ms(start));
  } catch (const InputError& e) {
    return unavailable(ToolId::ImageAnalyze, e.what(), elapsed_ms(start));
  }
}

ToolObservation SampleTools::text_evidence(Meter& meter) {
  return cache_.get_or_fetch(ToolId::WebSearch, sample_.id, [&] {
    meter.tool();
    return tools_.web_search(sample_.id, sample_.text);
  });
}

ToolObservation SampleTools::logic(Meter& meter) {
  return cache_.get_or_fetch(ToolId::LogicCheck, sample_.id, [&] {
    meter.tool();
    return tools_.logic_check(sample_.id, sample_.text, meter);
  });
}

ToolObservation SampleTools::forgery(Meter& meter) {
  if (!sample_.image.resolvable()) {
    throw InputError("sample '" + sample_.id + "': image not resolvable");
  }
  return cache_.get_or_fetch(ToolId::ForgeryDetect, sample_.id, [&] {
    meter.tool();
    return tools_.forgery_detect(sample_.id, sample_.image);
  });
}

ToolObservation SampleTools::image_description(Meter& meter) {
  if (!sample_.image.resolvable()) {
    throw InputError("sample '" + sample_.id + "': image not resolvable");
  }
  return cache_.get_or_fetch(ToolId::ImageAnalyze, sample_.id, [&] {
    meter.tool();
    return tools_.image_analyze(sample_.id, sample_.image, meter);
  });
}

}  // namespace m3d
