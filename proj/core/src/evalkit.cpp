// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/evalkit.hpp"

#include <fstream>
#include <set>

#include "m3d/errors.hpp"
#include "m3d/trace_json.hpp"

namespace m3d {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

/// Configured candidate budget and mode for a stage, read back from the
/// trace's config echo.
struct StageBudget {
  int n = 0;
  bool incremental = true;
};

std::optional<StageBudget> stage_budget(const PipelineTrace& t, Stage stage) {
  if (t.config_echo.empty()) return std::nullopt;
  auto echo = json::parse(t.config_echo, nullptr, false);
  if (echo.is_discarded() || !echo.contains("bon")) return std::nullopt;
  StageBudget b;
  b.n = echo["bon"].value("n", 0);
  b.incremental = echo["bon"].value("mode", std::string("incremental")) == "incremental";
  const auto name = std::string(stage_name(stage));
  if (echo.contains("overrides") && echo["overrides"].contains(name)) {
    b.n = echo["overrides"][name].value("n", b.n);
  }
  return b;
}

bool stage_stopped_early(const PipelineTrace& t, const StageTrace& st) {
  if (!st.activated || st.mode != StageMode::BoN || !st.verdict) return false;
  auto budget = stage_budget(t, st.stage);
  if (!budget) return false;
  if (budget->incremental) return t.cost.stage(st.stage).candidates_generated < budget->n;
  return st.stopping_prefix && *st.stopping_prefix < budget->n;
}

}  // namespace

Sample sample_from_json(const json& rec, const DatasetFieldMap& fields, const std::string& where) {
  if (!rec.is_object()) throw InputError(where + ": record is not a JSON object");
  auto str_field = [&](const std::string& key, bool required) -> std::optional<std::string> {
    auto it = rec.find(key);
    if (it == rec.end() || it->is_null()) {
      if (required) throw InputError(where + ": missing field '" + key + "'");
      return std::nullopt;
    }
    if (it->is_number_integer() && key == fields.id) return std::to_string(it->get<std::int64_t>());
    if (!it->is_string()) throw InputError(where + ": field '" + key + "' must be a string");
    return it->get<std::string>();
  };
  Sample s;
  s.id = *str_field(fields.id, true);
  s.text = *str_field(fields.text, true);
  if (s.id.empty()) throw InputError(where + ": empty id");
  if (s.text.empty()) throw InputError(where + ": empty text");
  if (auto img = str_field(fields.image, false)) s.image = ImageRef::from_string(*img);
  if (auto label = str_field(fields.label, false)) {
    auto l = parse_label(*label);
    if (!l) throw InputError(where + ": unknown label '" + *label + "'");
    s.gold_label = *l;
  }
  return s;
}

std::vector<Sample> load_dataset(const fs::path& path, const DatasetFieldMap& fields) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset: " + path.string());
  std::vector<Sample> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    auto rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw InputError(where + ": malformed JSON");
    auto s = sample_from_json(rec, fields, where);
    if (!seen.insert(s.id).second) throw InputError(where + ": duplicate id '" + s.id + "'");
    out.push_back(std::move(s));
  }
  return out;
}

MetricsReport compute_metrics(std::span<const Label> predictions, std::span<const Label> golds) {
  if (predictions.size() != golds.size()) {
    throw ContractViolation("compute_metrics: predictions and golds differ in length");
  }
  if (predictions.empty()) throw ContractViolation("compute_metrics: empty input");

  MetricsReport r;
  r.total = static_cast<std::int64_t>(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(predictions[i])];
  }
  std::int64_t correct = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    correct += r.confusion[k][k];
    std::int64_t predicted = 0;
    std::int64_t support = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      predicted += r.confusion[j][k];
      support += r.confusion[k][j];
    }
    auto& c = r.per_class[k];
    c.support = support;
    c.precision = ratio(r.confusion[k][k], predicted);
    c.recall = ratio(r.confusion[k][k], support);
    c.f1 = (c.precision + c.recall) > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                                          : 0.0;
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
    r.macro_f1 += c.f1;
  }
  r.macro_precision /= 4.0;
  r.macro_recall /= 4.0;
  r.macro_f1 /= 4.0;
  r.accuracy = ratio(correct, r.total);
  return r;
}

CostReport aggregate_costs(std::span<const PipelineTrace> traces) {
  if (traces.empty()) throw ContractViolation("aggregate_costs: no traces");
  CostReport r;
  r.samples = static_cast<std::int64_t>(traces.size());
  std::array<std::int64_t, 3> candidates{};
  std::int64_t level1 = 0;
  std::int64_t wall = 0;
  std::int64_t bon_samples = 0;
  std::int64_t early = 0;
  for (const auto& t : traces) {
    r.totals += t.cost.total();
    for (Stage s : kCascadeOrder) candidates[stage_slot(s)] += t.cost.stage(s).candidates_generated;
    if (t.plan_level == PlanLevel::Level1) ++level1;
    if (t.status == TraceStatus::Failed) ++r.failed;
    wall += t.wall_time_ms;
    bool has_bon = false;
    bool stopped = false;
    for (const auto& st : t.stage_traces) {
      if (!st.activated || st.mode != StageMode::BoN || !st.verdict) continue;
      has_bon = true;
      stopped = stopped || stage_stopped_early(t, st);
    }
    if (has_bon) ++bon_samples;
    if (stopped) ++early;
  }
  r.mean_chat_calls = ratio(r.totals.chat_calls, r.samples);
  r.mean_tool_calls = ratio(r.totals.tool_calls, r.samples);
  r.mean_reward_calls = ratio(r.totals.reward_calls, r.samples);
  r.mean_critique_calls = ratio(r.totals.critique_calls, r.samples);
  r.mean_retry_calls = ratio(r.totals.retry_calls, r.samples);
  for (std::size_t k = 0; k < 3; ++k) r.mean_candidates[k] = ratio(candidates[k], r.samples);
  r.bon_activation_ratio = ratio(level1, r.samples);
  r.early_stop_ratio = ratio(early, bon_samples);
  r.mean_wall_time_ms = ratio(wall, r.samples);
  return r;
}

ordered_json to_json(const MetricsReport& m) {
  ordered_json j;
  j["total"] = m.total;
  j["accuracy"] = m.accuracy;
  j["macro_precision"] = m.macro_precision;
  j["macro_recall"] = m.macro_recall;
  j["macro_f1"] = m.macro_f1;
  ordered_json per_class;
  for (Label l : kAllLabels) {
    const auto& c = m.per_class[static_cast<std::size_t>(l)];
    ordered_json e;
    e["precision"] = c.precision;
    e["recall"] = c.recall;
    e["f1"] = c.f1;
    e["support"] = c.support;
    per_class[std::string(label_name(l))] = std::move(e);
  }
  j["per_class"] = std::move(per_class);
  ordered_json confusion = ordered_json::array();
  for (const auto& row : m.confusion) confusion.push_back(row);
  j["confusion_matrix"] = std::move(confusion);
  return j;
}

ordered_json to_json(const CostReport& c) {
  ordered_json j;
  j["samples"] = c.samples;
  j["failed"] = c.failed;
  j["mean_chat_calls"] = c.mean_chat_calls;
  j["mean_tool_calls"] = c.mean_tool_calls;
  j["mean_reward_calls"] = c.mean_reward_calls;
  j["mean_critique_calls"] = c.mean_critique_calls;
  j["mean_retry_calls"] = c.mean_retry_calls;
  ordered_json cands;
  for (Stage s : kCascadeOrder) cands[std::string(stage_name(s))] = c.mean_candidates[stage_slot(s)];
  j["mean_candidates"] = std::move(cands);
  j["bon_activation_ratio"] = c.bon_activation_ratio;
  j["early_stop_ratio"] = c.early_stop_ratio;
  j["mean_wall_time_ms"] = c.mean_wall_time_ms;
  j["totals"] = to_json(c.totals);
  return j;
}

ordered_json build_report(const std::optional<MetricsReport>& metrics, const CostReport& costs,
                          const ordered_json& config_echo, std::span<const PipelineTrace> per_sample) {
  ordered_json j;
  j["metrics"] = metrics ? to_json(*metrics) : ordered_json(nullptr);
  j["costs"] = to_json(costs);
  j["config_echo"] = config_echo;
  if (!per_sample.empty()) {
    ordered_json rows = ordered_json::array();
    for (const auto& t : per_sample) {
      ordered_json row;
      row["sample_id"] = t.sample_id;
      row["status"] = t.status == TraceStatus::Ok ? "ok" : "failed";
      row["plan_level"] = t.plan_level ? ordered_json(std::string(plan_level_name(*t.plan_level)))
                                       : ordered_json(nullptr);
      row["final_label"] = t.final_label ? label_to_json(*t.final_label) : ordered_json(nullptr);
      rows.push_back(std::move(row));
    }
    j["per_sample"] = std::move(rows);
  }
  return j;
}

void emit_report(const ordered_json& report, const fs::path& path, bool overwrite) {
  std::error_code ec;
  if (!overwrite && fs::exists(path, ec)) {
    throw InputError("report exists (pass overwrite to replace): " + path.string());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write report: " + path.string());
  out << report.dump(2) << '\n';
  if (!out) throw InputError("failed writing report: " + path.string());
}

}  // namespace m3d
