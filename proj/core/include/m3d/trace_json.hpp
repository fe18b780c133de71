// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3d/types.hpp"

namespace m3d {

using ordered_json = nlohmann::ordered_json;

// Trace documents use the field names of the in-memory types. Labels are
// written as {"code": int, "name": str}. Key order is fixed so that equal
// traces serialize to identical bytes.

ordered_json to_json(const Verdict& verdict);
ordered_json to_json(const Candidate& candidate);
ordered_json to_json(const StageTrace& trace);
ordered_json to_json(const CallCounts& counts);
ordered_json to_json(const CostLedger& ledger);
ordered_json to_json(const PipelineTrace& trace);
ordered_json label_to_json(Label label);

/// Throws TraceFormatError on schema mismatch.
PipelineTrace trace_from_json(const nlohmann::json& doc);

/// Returns a list of schema problems; empty means the document is a valid trace.
std::vector<std::string> validate_trace_json(const nlohmann::json& doc);

/// Compact single-line serialization used for JSONL output.
std::string serialize_trace(const PipelineTrace& trace);

class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace m3d
