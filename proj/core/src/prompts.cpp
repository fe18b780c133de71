// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "m3d/agents.hpp"

namespace m3d {
namespace {

// Detection prompts. The planner and critique prompts below follow the
// published agent prompts word for word; the detection prompts are our own.

constexpr const char* kTextDetectBody =
    "Given a news caption, your task is to assess whether the textual claim contradicts "
    "credible objective evidence.\n"
    "\n"
    "News caption is: {news_caption}\n"
    "\n"
    "Evidence retrieved from an encyclopedic web search:\n"
    "{tool_result}\n"
    "\n"
    "Judge only the truthfulness of the text. Answer \"distorted\" if the caption contradicts "
    "credible evidence, otherwise answer \"original\".";

constexpr const char* kImageDetectBody =
    "Given a news image, your task is to assess whether the image contradicts credible "
    "objective evidence or violates common-sense constraints (for example physically "
    "impossible content, or traces of synthesis or editing).\n"
    "\n"
    "Grounded description of the image from an image analysis tool:\n"
    "{tool_result}\n"
    "\n"
    "Judge only the veracity of the image. Answer \"distorted\" if the image is manipulated or "
    "implausible, otherwise answer \"original\".";

constexpr const char* kCrossDetectBody =
    "Given a news caption and a news image, your task is to assess whether they are "
    "semantically aligned, i.e. whether they refer to the same entities, events, and contexts. "
    "Do not verify whether the caption or the image is factually correct on its own; decide "
    "only whether their combination forms a misleading pairing.\n"
    "\n"
    "News caption is: {news_caption}\n"
    "\n"
    "Grounded description of the image from an image analysis tool:\n"
    "{image_description}\n"
    "\n"
    "Answer \"distorted\" if the caption and image do not belong together, otherwise answer "
    "\"original\".";

constexpr const char* kPlannerBody =
    "Given a multi-modal misinformation sample, it contains both a news caption and a news "
    "image.\n"
    "\n"
    "News caption is: {news_caption}\n"
    "\n"
    "Your task is to decide whether this sample should be handled with standard reasoning or "
    "escalated to a stronger reasoning level using Best-of-N (BON) in later stages. Best-of-N "
    "(BON) refers to sampling multiple independent detection responses with the same prompt and "
    "selecting the most reliable one.\n"
    "\n"
    "Analyze the given news caption and image from the following aspects:\n"
    "\n"
    "- Whether the relationship between the caption and the image is clearly consistent, "
    "clearly inconsistent, or ambiguous.\n"
    "\n"
    "- Whether the caption makes claims that require explicit and concrete visual evidence.\n"
    "\n"
    "- Whether the image content alone is sufficient to verify those claims.\n"
    "Based on the analysis, choose ONE action from the following options:\n"
    "\n"
    "1. [BON level-0]: No Best-of-N scaling is needed.\n"
    "\n"
    "2. [BON level-1]: Use Best-of-N scaling.\n"
    "\n"
    "Return ONLY the action in the exact form: [BON level-n]";

constexpr const char* kTextCritiqueBody =
    "Given a news caption, news caption is:\n"
    "\n"
    "{news_caption}\n"
    "\n"
    "Your task is to assign a single score between 0 and 1 indicating how convincing the "
    "DETECTION RESULT is, based ONLY on its own reasoning.\n"
    "\n"
    "Detection Result:\n"
    "\n"
    "{detection_result}\n"
    "\n"
    "Result from logical consistency checking tool:\n"
    "\n"
    "{tool_result}\n"
    "\n"
    "Score the detection result from 0 to 1:\n"
    "\n"
    "- 1.0: fully convincing, logically sound, no over-inference.\n"
    "\n"
    "- 0.5: partially convincing, some logical gaps or weak support.\n"
    "\n"
    "- 0.0: unconvincing, logical  contradiction or strong over-inference.\n"
    "\n"
    "Output ONLY the score as a number between 0 and 1.";

constexpr const char* kImageCritiqueBody =
    "According to the given news image, your task is to assign a single score between 0 and 1 "
    "indicating how convincing the DETECTION RESULT is, based ONLY on its own reasoning.\n"
    "\n"
    "Detection Result:\n"
    "\n"
    "{detection_result}\n"
    "\n"
    "Result from image forgery detection tool:\n"
    "\n"
    "{tool_result}\n"
    "\n"
    "Score the detection result from 0 to 1:\n"
    "\n"
    "- 1.0: The detection result is strongly supported by the image forensic result, with no "
    "apparent logical gaps or over-interpretation.\n"
    "\n"
    "- 0.5: The detection result is partially supported by the image forensic result, but "
    "contains uncertainty, weak evidence, or mild over-interpretation.\n"
    "\n"
    "- 0.0: The detection result is not supported by the image forensic result, or shows clear "
    "logical inconsistency or strong over-interpretation.\n"
    "\n"
    "Output ONLY the score as a number between 0 and 1.";

PromptTemplate make(const char* id, const char* body, std::set<std::string, std::less<>> required) {
  return PromptTemplate{id, body, std::move(required)};
}

}  // namespace

const char* const kVerdictFormatInstruction =
    "\n\nRespond with exactly one JSON object and no other text, in the form:\n"
    "{\"verdict\": \"distorted\" or \"original\", \"reasoning\": \"<your explanation>\"}";

const char* const kVerdictFormatReminder =
    "\n\nFORMAT REMINDER: your previous reply could not be parsed. Reply with exactly one JSON "
    "object of the form {\"verdict\": \"distorted\" or \"original\", \"reasoning\": \"...\"} and "
    "nothing else.";

const char* const kPlanFormatReminder =
    "\n\nFORMAT REMINDER: reply with exactly [BON level-0] or [BON level-1] and nothing else.";

const char* const kScoreFormatReminder =
    "\n\nFORMAT REMINDER: reply with a single number between 0 and 1 and nothing else.";

const char* const kToolUnavailableText = "TOOL RESULT: unavailable";

PromptLibrary::PromptLibrary() {
  using namespace placeholders;
  for (auto t : {
           make(template_ids::kTextDetect, kTextDetectBody, {kNewsCaption, kToolResult}),
           make(template_ids::kImageDetect, kImageDetectBody, {kToolResult}),
           make(template_ids::kCrossDetect, kCrossDetectBody, {kNewsCaption, kImageDescription}),
           make(template_ids::kPlanner, kPlannerBody, {kNewsCaption}),
           make(template_ids::kTextCritique, kTextCritiqueBody,
                {kNewsCaption, kDetectionResult, kToolResult}),
           make(template_ids::kImageCritique, kImageCritiqueBody, {kDetectionResult, kToolResult}),
       }) {
    templates_.emplace(t.id, std::move(t));
  }
}

PromptLibrary PromptLibrary::with_overrides(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw TemplateError("template directory not found: " + dir.string());
  }
  PromptLibrary lib;
  for (auto& [id, tmpl] : lib.templates_) {
    const auto file = dir / (id + ".txt");
    if (!std::filesystem::is_regular_file(file, ec)) continue;
    std::ifstream in(file);
    std::ostringstream buf;
    buf << in.rdbuf();
    tmpl.body = buf.str();
  }
  return lib;
}

const PromptTemplate& PromptLibrary::get(std::string_view id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw TemplateError("unknown template id: " + std::string(id));
  return it->second;
}

}  // namespace m3d
