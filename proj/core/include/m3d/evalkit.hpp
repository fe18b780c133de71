// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3d/types.hpp"

namespace m3d {

/// JSON field names of a dataset record. Lets differently shaped benchmark
/// exports load without code changes.
struct DatasetFieldMap {
  std::string id = "id";
  std::string text = "text";
  std::string image = "image";
  std::string label = "label";
};

/// Reads a JSONL dataset (one record per line, blank lines skipped).
/// Throws InputError naming the line on malformed records, missing
/// id/text, unknown labels, or duplicate ids.
std::vector<Sample> load_dataset(const std::filesystem::path& path, const DatasetFieldMap& fields = {});

/// Parses one record; `where` prefixes error messages.
Sample sample_from_json(const nlohmann::json& record, const DatasetFieldMap& fields,
                        const std::string& where);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  std::int64_t total = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::array<ClassMetrics, 4> per_class{};
  /// confusion[gold][predicted]
  std::array<std::array<std::int64_t, 4>, 4> confusion{};
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Multi-class metrics with macro averaging over the four labels. Undefined
/// ratios (no predictions or no support for a class) count as 0.
/// Throws ContractViolation on empty or mismatched inputs.
MetricsReport compute_metrics(std::span<const Label> predictions, std::span<const Label> golds);

struct CostReport {
  std::int64_t samples = 0;
  std::int64_t failed = 0;
  double mean_chat_calls = 0.0;
  double mean_tool_calls = 0.0;
  double mean_reward_calls = 0.0;
  double mean_critique_calls = 0.0;
  double mean_retry_calls = 0.0;
  std::array<double, 3> mean_candidates{};  // per stage, over all samples
  double bon_activation_ratio = 0.0;        // Level1 traces / all traces
  double early_stop_ratio = 0.0;            // samples with an early-stopped BoN stage / samples with BoN
  double mean_wall_time_ms = 0.0;
  CallCounts totals;
};

/// Means over all traces, computed from integer sums. Throws
/// ContractViolation on an empty list.
CostReport aggregate_costs(std::span<const PipelineTrace> traces);

nlohmann::ordered_json to_json(const MetricsReport& metrics);
nlohmann::ordered_json to_json(const CostReport& costs);

/// Report document: {metrics, costs, config_echo, per_sample?}.
nlohmann::ordered_json build_report(const std::optional<MetricsReport>& metrics, const CostReport& costs,
                                    const nlohmann::ordered_json& config_echo,
                                    std::span<const PipelineTrace> per_sample = {});

/// Writes the report (pretty-printed, trailing newline). Refuses to replace
/// an existing file unless `overwrite` is set. Throws InputError on failure.
void emit_report(const nlohmann::ordered_json& report, const std::filesystem::path& path,
                 bool overwrite = false);

}  // namespace m3d
