// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3d/agents.hpp"
#include "m3d/backends.hpp"
#include "m3d/bon.hpp"
#include "m3d/tools.hpp"
#include "m3d/types.hpp"

namespace m3d {

/// Planner: the planning agent picks Standard or BoN per sample.
/// AlwaysStandard / AlwaysBoN bypass the planner.
enum class Routing : int { Planner = 0, AlwaysStandard = 1, AlwaysBoN = 2 };

std::string_view routing_name(Routing routing) noexcept;  // "planner" | "standard" | "bon"
std::optional<Routing> parse_routing(std::string_view name);

struct StageOverride {
  std::optional<int> n;
  std::optional<double> tau;
};

/// Endpoint and path settings. Echoed into outputs; used by whoever builds
/// the PipelineDeps.
struct Endpoints {
  std::string backend_url;
  std::string model = "default";
  std::string reward_url;
  std::string forgery_url;
  std::string search_url = "https://en.wikipedia.org/w/api.php";
  std::string templates_dir;
  std::string fixtures_dir;
};

struct PipelineConfig {
  Routing routing = Routing::Planner;
  BonConfig bon;
  std::array<StageOverride, 3> overrides{};
  double standard_temperature = 0.0;
  double planner_temperature = 0.0;
  int max_tokens = 1024;
  std::int64_t seed = 0;
  PlanLevel planner_fallback = PlanLevel::Level0;
  std::size_t tool_char_cap = 2000;
  Endpoints endpoints;

  /// Global BonConfig with the stage's (n, tau) override applied.
  BonConfig bon_for(Stage stage) const;
  void validate() const;
};

/// JSON form of the configuration (also the config-file schema). Infinite
/// tau values are written as the string "inf".
nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);
/// Applies the fields present in `doc` on top of `base`. Throws
/// ContractViolation on type or value errors.
PipelineConfig config_from_json(const nlohmann::json& doc, PipelineConfig base = {});

struct PipelineDeps {
  ChatBackend& chat;
  RewardBackend& reward;
  const Toolset& tools;
  const PromptLibrary& prompts;
  /// Millisecond clock used for wall_time_ms; steady_clock when empty.
  std::function<std::int64_t()> clock_ms;
};

class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& what, PipelineTrace partial)
      : std::runtime_error(what), partial(std::move(partial)) {}
  PipelineTrace partial;
};

/// Runs one sample through planner routing and the Text -> Image -> Cross
/// cascade. Throws ContractViolation for an invalid configuration and
/// PipelineError (with the partial trace) when the sample cannot be
/// classified.
PipelineTrace run_pipeline(const Sample& sample, const PipelineConfig& cfg, const PipelineDeps& deps);

/// Runs samples on up to `parallelism` workers. Results keep input order;
/// failed samples come back as traces with status Failed.
std::vector<PipelineTrace> run_batch(std::span<const Sample> samples, const PipelineConfig& cfg,
                                     const PipelineDeps& deps, int parallelism);

/// Reward-model inputs for a candidate verdict.
std::string reward_context(Stage stage, const Sample& sample);
std::string reward_response(const Verdict& verdict);

}  // namespace m3d
