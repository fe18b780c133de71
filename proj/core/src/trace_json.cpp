// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/trace_json.hpp"

#include <cmath>

namespace m3d {
namespace {

using json = nlohmann::json;

template <typename T>
ordered_json opt(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

[[noreturn]] void fail(const std::string& what) { throw TraceFormatError(what); }

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) fail(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(where + ": missing field '" + key + "'");
  return *it;
}

std::string get_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_string()) fail(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_boolean()) fail(where + "." + key + ": expected a boolean");
  return v.get<bool>();
}

std::int64_t get_int(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_number_integer()) fail(where + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

std::optional<double> get_opt_number(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) fail(where + "." + key + ": expected a number or null");
  return v.get<double>();
}

std::optional<int> get_opt_int(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number_integer()) fail(where + "." + key + ": expected an integer or null");
  return v.get<int>();
}

Stage get_stage(const json& obj, const char* key, const std::string& where) {
  auto s = parse_stage(get_string(obj, key, where));
  if (!s) fail(where + "." + key + ": unknown stage");
  return *s;
}

Label label_from_json(const json& v, const std::string& where) {
  const int code = static_cast<int>(get_int(v, "code", where));
  if (code < 0 || code > 3) fail(where + ": label code out of range");
  Label l = static_cast<Label>(code);
  if (get_string(v, "name", where) != label_name(l)) fail(where + ": label code/name mismatch");
  return l;
}

Verdict verdict_from_json(const json& v, const std::string& where) {
  Verdict out;
  out.stage = get_stage(v, "stage", where);
  out.is_distorted = get_bool(v, "is_distorted", where);
  out.reasoning = get_string(v, "reasoning", where);
  out.raw_response = get_string(v, "raw_response", where);
  return out;
}

CallCounts counts_from_json(const json& v, const std::string& where) {
  CallCounts c;
  c.chat_calls = get_int(v, "chat_calls", where);
  c.tool_calls = get_int(v, "tool_calls", where);
  c.reward_calls = get_int(v, "reward_calls", where);
  c.critique_calls = get_int(v, "critique_calls", where);
  c.retry_calls = get_int(v, "retry_calls", where);
  c.candidates_generated = get_int(v, "candidates_generated", where);
  for (auto n : {c.chat_calls, c.tool_calls, c.reward_calls, c.critique_calls, c.retry_calls,
                 c.candidates_generated}) {
    if (n < 0) fail(where + ": negative counter");
  }
  return c;
}

}  // namespace

ordered_json label_to_json(Label label) {
  ordered_json j;
  j["code"] = label_code(label);
  j["name"] = std::string(label_name(label));
  return j;
}

ordered_json to_json(const Verdict& v) {
  ordered_json j;
  j["stage"] = std::string(stage_name(v.stage));
  j["is_distorted"] = v.is_distorted;
  j["reasoning"] = v.reasoning;
  j["raw_response"] = v.raw_response;
  return j;
}

ordered_json to_json(const Candidate& c) {
  ordered_json j;
  j["index"] = c.index;
  j["verdict"] = to_json(c.verdict);
  j["reward_raw"] = opt(c.reward_raw);
  j["reward_norm"] = opt(c.reward_norm);
  j["critique"] = opt(c.critique);
  j["fused"] = opt(c.fused);
  return j;
}

ordered_json to_json(const StageTrace& t) {
  ordered_json j;
  j["stage"] = std::string(stage_name(t.stage));
  j["activated"] = t.activated;
  j["mode"] = std::string(stage_mode_name(t.mode));
  ordered_json cands = ordered_json::array();
  for (const auto& c : t.candidates) cands.push_back(to_json(c));
  j["candidates"] = std::move(cands);
  j["selected_index"] = opt(t.selected_index);
  j["stopping_prefix"] = opt(t.stopping_prefix);
  j["verdict"] = t.verdict ? to_json(*t.verdict) : ordered_json(nullptr);
  return j;
}

ordered_json to_json(const CallCounts& c) {
  ordered_json j;
  j["chat_calls"] = c.chat_calls;
  j["tool_calls"] = c.tool_calls;
  j["reward_calls"] = c.reward_calls;
  j["critique_calls"] = c.critique_calls;
  j["retry_calls"] = c.retry_calls;
  j["candidates_generated"] = c.candidates_generated;
  return j;
}

ordered_json to_json(const CostLedger& l) {
  ordered_json j;
  j["planner"] = to_json(l.planner);
  ordered_json stages;
  for (Stage s : kCascadeOrder) stages[std::string(stage_name(s))] = to_json(l.stage(s));
  j["stages"] = std::move(stages);
  j["total"] = to_json(l.total());
  return j;
}

ordered_json to_json(const PipelineTrace& t) {
  ordered_json j;
  j["sample_id"] = t.sample_id;
  j["status"] = t.status == TraceStatus::Ok ? "ok" : "failed";
  j["error"] = opt(t.error);
  j["plan_level"] =
      t.plan_level ? ordered_json(std::string(plan_level_name(*t.plan_level))) : ordered_json(nullptr);
  j["planner_ran"] = t.planner_ran;
  ordered_json stages = ordered_json::array();
  for (const auto& st : t.stage_traces) stages.push_back(to_json(st));
  j["stage_traces"] = std::move(stages);
  j["final_label"] = t.final_label ? label_to_json(*t.final_label) : ordered_json(nullptr);
  j["cost"] = to_json(t.cost);
  j["wall_time_ms"] = t.wall_time_ms;
  j["warnings"] = t.warnings;
  j["config_echo"] =
      t.config_echo.empty() ? ordered_json(nullptr) : ordered_json::parse(t.config_echo);
  return j;
}

std::string serialize_trace(const PipelineTrace& trace) { return to_json(trace).dump(); }

PipelineTrace trace_from_json(const json& doc) {
  const std::string where = "trace";
  PipelineTrace t;
  t.sample_id = get_string(doc, "sample_id", where);
  const auto status = get_string(doc, "status", where);
  if (status == "ok") {
    t.status = TraceStatus::Ok;
  } else if (status == "failed") {
    t.status = TraceStatus::Failed;
  } else {
    fail("trace.status: expected 'ok' or 'failed'");
  }
  const auto& err = field(doc, "error", where);
  if (!err.is_null()) {
    if (!err.is_string()) fail("trace.error: expected a string or null");
    t.error = err.get<std::string>();
  }
  const auto& plan = field(doc, "plan_level", where);
  if (!plan.is_null()) {
    if (!plan.is_string()) fail("trace.plan_level: expected a string or null");
    t.plan_level = parse_plan_level(plan.get<std::string>());
    if (!t.plan_level) fail("trace.plan_level: unknown level");
  }
  t.planner_ran = get_bool(doc, "planner_ran", where);

  const auto& stages = field(doc, "stage_traces", where);
  if (!stages.is_array()) fail("trace.stage_traces: expected an array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sw = "trace.stage_traces[" + std::to_string(i) + "]";
    const auto& sj = stages[i];
    StageTrace st;
    st.stage = get_stage(sj, "stage", sw);
    st.activated = get_bool(sj, "activated", sw);
    auto mode = parse_stage_mode(get_string(sj, "mode", sw));
    if (!mode) fail(sw + ".mode: unknown mode");
    st.mode = *mode;
    const auto& cands = field(sj, "candidates", sw);
    if (!cands.is_array()) fail(sw + ".candidates: expected an array");
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const std::string cw = sw + ".candidates[" + std::to_string(k) + "]";
      const auto& cj = cands[k];
      Candidate c;
      c.index = static_cast<int>(get_int(cj, "index", cw));
      c.verdict = verdict_from_json(field(cj, "verdict", cw), cw + ".verdict");
      c.reward_raw = get_opt_number(cj, "reward_raw", cw);
      c.reward_norm = get_opt_number(cj, "reward_norm", cw);
      c.critique = get_opt_number(cj, "critique", cw);
      c.fused = get_opt_number(cj, "fused", cw);
      st.candidates.push_back(std::move(c));
    }
    st.selected_index = get_opt_int(sj, "selected_index", sw);
    st.stopping_prefix = get_opt_int(sj, "stopping_prefix", sw);
    const auto& vj = field(sj, "verdict", sw);
    if (!vj.is_null()) st.verdict = verdict_from_json(vj, sw + ".verdict");
    t.stage_traces.push_back(std::move(st));
  }

  const auto& fl = field(doc, "final_label", where);
  if (!fl.is_null()) t.final_label = label_from_json(fl, "trace.final_label");

  const auto& cost = field(doc, "cost", where);
  t.cost.planner = counts_from_json(field(cost, "planner", "trace.cost"), "trace.cost.planner");
  const auto& cs = field(cost, "stages", "trace.cost");
  for (Stage s : kCascadeOrder) {
    const std::string name(stage_name(s));
    t.cost.stage(s) = counts_from_json(field(cs, name.c_str(), "trace.cost.stages"),
                                       "trace.cost.stages." + name);
  }
  if (counts_from_json(field(cost, "total", "trace.cost"), "trace.cost.total") != t.cost.total()) {
    fail("trace.cost.total: does not equal the sum over buckets");
  }
  t.wall_time_ms = get_int(doc, "wall_time_ms", where);
  const auto& warnings = field(doc, "warnings", where);
  if (!warnings.is_array()) fail("trace.warnings: expected an array");
  for (const auto& w : warnings) {
    if (!w.is_string()) fail("trace.warnings: expected strings");
    t.warnings.push_back(w.get<std::string>());
  }
  const auto& echo = field(doc, "config_echo", where);
  if (!echo.is_null()) t.config_echo = ordered_json::parse(echo.dump()).dump();
  return t;
}

std::vector<std::string> validate_trace_json(const json& doc) {
  std::vector<std::string> problems;
  PipelineTrace t;
  try {
    t = trace_from_json(doc);
  } catch (const std::exception& e) {
    problems.emplace_back(e.what());
    return problems;
  }

  // Stage order and selection bounds.
  for (std::size_t i = 0; i < t.stage_traces.size(); ++i) {
    const auto& st = t.stage_traces[i];
    if (i >= kCascadeOrder.size() || st.stage != kCascadeOrder[i]) {
      problems.push_back("stage_traces out of cascade order");
      break;
    }
    if (!st.activated) {
      if (!st.candidates.empty() || st.verdict) {
        problems.push_back(std::string(stage_name(st.stage)) + ": inactive stage carries output");
      }
      if (!t.cost.stage(st.stage).is_zero()) {
        problems.push_back(std::string(stage_name(st.stage)) + ": inactive stage has cost");
      }
    }
    if (st.selected_index &&
        (*st.selected_index < 0 ||
         *st.selected_index >= static_cast<int>(st.candidates.size()))) {
      problems.push_back(std::string(stage_name(st.stage)) + ": selected_index out of range");
    }
    if (st.mode == StageMode::Standard && st.verdict && st.candidates.size() != 1) {
      problems.push_back(std::string(stage_name(st.stage)) + ": Standard mode needs one candidate");
    }
    for (const auto& c : st.candidates) {
      if (!c.fused) continue;
      if (!c.reward_norm || *c.reward_norm < 0.0 || *c.reward_norm > 1.0) {
        problems.push_back(std::string(stage_name(st.stage)) + ": reward_norm outside [0,1]");
      }
      if (c.critique && (*c.critique < 0.0 || *c.critique > 1.0)) {
        problems.push_back(std::string(stage_name(st.stage)) + ": critique outside [0,1]");
      }
      const double expect = c.reward_norm.value_or(0.0) + c.critique.value_or(0.0);
      if (std::abs(expect - *c.fused) > 1e-12) {
        problems.push_back(std::string(stage_name(st.stage)) + ": fused != reward_norm + critique");
      }
    }
  }

  // Activation conformance against the recorded verdicts.
  if (t.status == TraceStatus::Ok) {
    std::optional<Verdict> vt, vi;
    if (const auto* s = t.find_stage(Stage::Text)) vt = s->verdict;
    if (const auto* s = t.find_stage(Stage::Image)) vi = s->verdict;
    try {
      const auto flags = activation_flags(vt, vi);
      for (const auto& st : t.stage_traces) {
        if ((flags[st.stage] == 1) != st.activated) {
          problems.push_back(std::string(stage_name(st.stage)) +
                             ": activation disagrees with cascade flags");
        }
      }
      std::vector<Verdict> verdicts;
      for (const auto& st : t.stage_traces) {
        if (st.activated && st.verdict) verdicts.push_back(*st.verdict);
      }
      if (!t.final_label) {
        problems.push_back("ok trace without final_label");
      } else if (assemble_final_label(verdicts) != *t.final_label) {
        problems.push_back("final_label inconsistent with stage verdicts");
      }
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  }
  return problems;
}

}  // namespace m3d
