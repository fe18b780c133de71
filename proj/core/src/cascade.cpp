// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/cascade.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "m3d/errors.hpp"
#include "m3d/meter.hpp"

namespace m3d {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mt19937_64 stage_rng(std::int64_t seed, const std::string& sample_id, Stage stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(sample_id)),
                    static_cast<std::uint32_t>(fnv1a(sample_id) >> 32),
                    static_cast<std::uint32_t>(stage)};
  return std::mt19937_64(seq);
}

const char* task_sentence(Stage stage) {
  switch (stage) {
    case Stage::Text:
      return "Task: decide whether the news caption contradicts credible objective evidence.";
    case Stage::Image:
      return "Task: decide whether the news image contradicts credible objective evidence or "
             "violates common-sense constraints.";
    case Stage::Cross:
      return "Task: decide whether the news caption and the news image are semantically aligned.";
  }
  return "";
}

/// Shared state for running one stage of one sample.
struct StageEnv {
  const Sample& sample;
  const PipelineConfig& cfg;
  const PipelineDeps& deps;
  SampleTools& tools;
  Meter& meter;
};

Verdict detect(Stage stage, StageEnv& env, const ToolObservation& obs, const CallOptions& opts) {
  AgentContext ctx{env.deps.chat, env.meter, env.deps.prompts};
  env.meter.candidate();
  switch (stage) {
    case Stage::Text: return run_text_agent({env.sample, obs}, ctx, opts);
    case Stage::Image: return run_image_agent({env.sample, obs}, ctx, opts);
    case Stage::Cross: return run_cross_agent({env.sample, obs}, ctx, opts);
  }
  throw ContractViolation("unknown stage");
}

ToolObservation prompt_observation(Stage stage, StageEnv& env) {
  // The cross stage reads the grounded image description only.
  return stage == Stage::Text ? env.tools.text_evidence(env.meter)
                              : env.tools.image_description(env.meter);
}

class DetectionWorker final : public CandidateWorker {
 public:
  DetectionWorker(Stage stage, StageEnv& env, const BonConfig& bon, ToolObservation obs)
      : stage_(stage), env_(env), bon_(bon), obs_(std::move(obs)) {}

  Verdict generate(int index) override {
    CallOptions opts;
    opts.temperature = bon_.temperature;
    opts.seed = env_.cfg.seed + index;
    opts.candidate_index = index;
    opts.max_tokens = env_.cfg.max_tokens;
    return detect(stage_, env_, obs_, opts);
  }

  double reward(const Verdict& verdict, int index) override {
    RewardRequest req;
    req.context = reward_context(stage_, env_.sample);
    req.response = reward_response(verdict);
    req.sample_id = env_.sample.id;
    req.stage = stage_;
    req.candidate_index = index;
    env_.meter.reward();
    return env_.deps.reward.score_reward(req);
  }

  ScoredCritique critique(const Verdict& verdict, int index) override {
    AgentContext ctx{env_.deps.chat, env_.meter, env_.deps.prompts};
    CallOptions opts;
    opts.temperature = env_.cfg.standard_temperature;
    opts.candidate_index = index;
    opts.max_tokens = env_.cfg.max_tokens;
    CritiqueResult r;
    if (stage_ == Stage::Text) {
      r = run_text_critique(env_.sample, verdict, env_.tools.logic(env_.meter), ctx, opts);
    } else {
      r = run_image_critique(env_.sample, verdict, env_.tools.forgery(env_.meter), ctx, opts);
    }
    return {r.score, r.warning};
  }

 private:
  Stage stage_;
  StageEnv& env_;
  BonConfig bon_;
  ToolObservation obs_;
};

StageTrace run_stage(Stage stage, StageMode mode, StageEnv& env, std::vector<std::string>& warnings) {
  if (stage != Stage::Text && !env.sample.image.resolvable()) {
    throw InputError("sample '" + env.sample.id + "': " + std::string(stage_name(stage)) +
                     " stage requires a resolvable image");
  }
  const ToolObservation obs = prompt_observation(stage, env);
  if (!obs.ok()) {
    warnings.push_back(std::string(tool_name(obs.tool_id)) + " unavailable for " + env.sample.id +
                       ": " + obs.content);
  }

  if (mode == StageMode::Standard) {
    CallOptions opts;
    opts.temperature = env.cfg.standard_temperature;
    opts.seed = env.cfg.seed;
    opts.candidate_index = 0;
    opts.max_tokens = env.cfg.max_tokens;
    Candidate c;
    c.index = 0;
    c.verdict = detect(stage, env, obs, opts);
    StageTrace st;
    st.stage = stage;
    st.activated = true;
    st.mode = StageMode::Standard;
    st.verdict = c.verdict;
    st.selected_index = 0;
    st.candidates.push_back(std::move(c));
    return st;
  }

  const BonConfig bon = env.cfg.bon_for(stage);
  DetectionWorker worker(stage, env, bon, obs);
  auto rng = stage_rng(env.cfg.seed, env.sample.id, stage);
  auto outcome = run_bon_stage(StageScoringPlan::for_stage(stage), bon, worker, &rng);
  for (auto& w : outcome.warnings) warnings.push_back(std::move(w));
  return std::move(outcome.trace);
}

std::int64_t now_ms(const PipelineDeps& deps) {
  if (deps.clock_ms) return deps.clock_ms();
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

StageTrace inactive(Stage stage, StageMode mode) {
  StageTrace st;
  st.stage = stage;
  st.activated = false;
  st.mode = mode;
  return st;
}

// JSON helpers for the config schema.

double tau_from_json(const nlohmann::json& v, const char* where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw ContractViolation(std::string(where) + ": tau must be a number or \"inf\"");
}

nlohmann::ordered_json tau_to_json(double tau) {
  if (std::isinf(tau)) return tau > 0 ? "inf" : "-inf";
  return tau;
}

template <typename T>
T get_as(const nlohmann::json& obj, const char* key, const T& fallback, const char* where) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ContractViolation(std::string(where) + "." + key + ": wrong type");
  }
}

}  // namespace

std::string_view routing_name(Routing routing) noexcept {
  switch (routing) {
    case Routing::Planner: return "planner";
    case Routing::AlwaysStandard: return "standard";
    case Routing::AlwaysBoN: return "bon";
  }
  return "planner";
}

std::optional<Routing> parse_routing(std::string_view name) {
  if (name == "planner") return Routing::Planner;
  if (name == "standard") return Routing::AlwaysStandard;
  if (name == "bon") return Routing::AlwaysBoN;
  return std::nullopt;
}

BonConfig PipelineConfig::bon_for(Stage stage) const {
  BonConfig out = bon;
  const auto& o = overrides[stage_slot(stage)];
  if (o.n) out.n_candidates = *o.n;
  if (o.tau) out.tau = *o.tau;
  return out;
}

void PipelineConfig::validate() const {
  for (Stage s : kCascadeOrder) bon_for(s).validate();
  if (!(standard_temperature >= 0.0) || !(planner_temperature >= 0.0)) {
    throw ContractViolation("temperatures must be >= 0");
  }
  if (max_tokens <= 0) throw ContractViolation("max_tokens must be positive");
  if (tool_char_cap == 0) throw ContractViolation("tool_char_cap must be positive");
}

std::string reward_context(Stage stage, const Sample& sample) {
  return std::string(task_sentence(stage)) + " CLAIM: " + sample.text;
}

std::string reward_response(const Verdict& verdict) {
  return std::string("VERDICT: ") + (verdict.is_distorted ? "distorted" : "original") +
         " REASONING: " + verdict.reasoning;
}

nlohmann::ordered_json config_to_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  j["routing"] = std::string(routing_name(cfg.routing));
  nlohmann::ordered_json bon;
  bon["n"] = cfg.bon.n_candidates;
  bon["tau"] = tau_to_json(cfg.bon.tau);
  bon["mode"] = std::string(bon_mode_name(cfg.bon.mode));
  bon["selection"] = std::string(selection_name(cfg.bon.selection));
  bon["beta"] = cfg.bon.beta;
  bon["concurrency"] = cfg.bon.concurrency_limit;
  bon["temperature"] = cfg.bon.temperature;
  j["bon"] = std::move(bon);
  nlohmann::ordered_json overrides = nlohmann::ordered_json::object();
  for (Stage s : kCascadeOrder) {
    const auto& o = cfg.overrides[stage_slot(s)];
    if (!o.n && !o.tau) continue;
    nlohmann::ordered_json e;
    if (o.n) e["n"] = *o.n;
    if (o.tau) e["tau"] = tau_to_json(*o.tau);
    overrides[std::string(stage_name(s))] = std::move(e);
  }
  j["overrides"] = std::move(overrides);
  j["standard_temperature"] = cfg.standard_temperature;
  j["planner_temperature"] = cfg.planner_temperature;
  j["max_tokens"] = cfg.max_tokens;
  j["seed"] = cfg.seed;
  j["planner_fallback"] = std::string(plan_level_name(cfg.planner_fallback));
  j["tool_char_cap"] = cfg.tool_char_cap;
  nlohmann::ordered_json ep;
  ep["backend_url"] = cfg.endpoints.backend_url;
  ep["model"] = cfg.endpoints.model;
  ep["reward_url"] = cfg.endpoints.reward_url;
  ep["forgery_url"] = cfg.endpoints.forgery_url;
  ep["search_url"] = cfg.endpoints.search_url;
  ep["templates_dir"] = cfg.endpoints.templates_dir;
  ep["fixtures_dir"] = cfg.endpoints.fixtures_dir;
  j["endpoints"] = std::move(ep);
  return j;
}

PipelineConfig config_from_json(const nlohmann::json& doc, PipelineConfig cfg) {
  if (!doc.is_object()) throw ContractViolation("config: expected a JSON object");
  if (doc.contains("routing")) {
    auto r = parse_routing(get_as<std::string>(doc, "routing", "", "config"));
    if (!r) throw ContractViolation("config.routing: expected planner|standard|bon");
    cfg.routing = *r;
  }
  if (auto b = doc.find("bon"); b != doc.end()) {
    if (!b->is_object()) throw ContractViolation("config.bon: expected an object");
    cfg.bon.n_candidates = get_as<int>(*b, "n", cfg.bon.n_candidates, "config.bon");
    if (b->contains("tau")) cfg.bon.tau = tau_from_json((*b)["tau"], "config.bon");
    if (b->contains("mode")) {
      auto m = parse_bon_mode(get_as<std::string>(*b, "mode", "", "config.bon"));
      if (!m) throw ContractViolation("config.bon.mode: expected faithful|incremental");
      cfg.bon.mode = *m;
    }
    if (b->contains("selection")) {
      auto s = parse_selection(get_as<std::string>(*b, "selection", "", "config.bon"));
      if (!s) throw ContractViolation("config.bon.selection: expected argmax|boltzmann");
      cfg.bon.selection = *s;
    }
    cfg.bon.beta = get_as<double>(*b, "beta", cfg.bon.beta, "config.bon");
    cfg.bon.concurrency_limit = get_as<int>(*b, "concurrency", cfg.bon.concurrency_limit, "config.bon");
    cfg.bon.temperature = get_as<double>(*b, "temperature", cfg.bon.temperature, "config.bon");
  }
  if (auto o = doc.find("overrides"); o != doc.end()) {
    if (!o->is_object()) throw ContractViolation("config.overrides: expected an object");
    for (const auto& [name, entry] : o->items()) {
      auto s = parse_stage(name);
      if (!s || !entry.is_object()) throw ContractViolation("config.overrides: bad entry '" + name + "'");
      auto& slot = cfg.overrides[stage_slot(*s)];
      if (entry.contains("n")) slot.n = get_as<int>(entry, "n", 0, "config.overrides");
      if (entry.contains("tau")) slot.tau = tau_from_json(entry["tau"], "config.overrides");
    }
  }
  cfg.standard_temperature =
      get_as<double>(doc, "standard_temperature", cfg.standard_temperature, "config");
  cfg.planner_temperature = get_as<double>(doc, "planner_temperature", cfg.planner_temperature, "config");
  cfg.max_tokens = get_as<int>(doc, "max_tokens", cfg.max_tokens, "config");
  cfg.seed = get_as<std::int64_t>(doc, "seed", cfg.seed, "config");
  if (doc.contains("planner_fallback")) {
    auto l = parse_plan_level(get_as<std::string>(doc, "planner_fallback", "", "config"));
    if (!l) throw ContractViolation("config.planner_fallback: expected Level0|Level1");
    cfg.planner_fallback = *l;
  }
  cfg.tool_char_cap = get_as<std::size_t>(doc, "tool_char_cap", cfg.tool_char_cap, "config");
  if (auto e = doc.find("endpoints"); e != doc.end()) {
    if (!e->is_object()) throw ContractViolation("config.endpoints: expected an object");
    auto& ep = cfg.endpoints;
    ep.backend_url = get_as<std::string>(*e, "backend_url", ep.backend_url, "config.endpoints");
    ep.model = get_as<std::string>(*e, "model", ep.model, "config.endpoints");
    ep.reward_url = get_as<std::string>(*e, "reward_url", ep.reward_url, "config.endpoints");
    ep.forgery_url = get_as<std::string>(*e, "forgery_url", ep.forgery_url, "config.endpoints");
    ep.search_url = get_as<std::string>(*e, "search_url", ep.search_url, "config.endpoints");
    ep.templates_dir = get_as<std::string>(*e, "templates_dir", ep.templates_dir, "config.endpoints");
    ep.fixtures_dir = get_as<std::string>(*e, "fixtures_dir", ep.fixtures_dir, "config.endpoints");
  }
  return cfg;
}

PipelineTrace run_pipeline(const Sample& sample, const PipelineConfig& cfg, const PipelineDeps& deps) {
  cfg.validate();
  const auto start = now_ms(deps);

  PipelineTrace trace;
  trace.sample_id = sample.id;
  trace.config_echo = config_to_json(cfg).dump();

  Meter planner_meter;
  std::array<Meter, 3> stage_meters;
  auto snapshot_costs = [&] {
    trace.cost.planner = planner_meter.snapshot();
    for (Stage s : kCascadeOrder) trace.cost.stage(s) = stage_meters[stage_slot(s)].snapshot();
  };

  StageMode mode = StageMode::Standard;
  std::size_t next_stage = 0;
  try {
    sample.validate();

    switch (cfg.routing) {
      case Routing::Planner: {
        if (!sample.image.resolvable()) {
          throw InputError("sample '" + sample.id + "': planner routing requires a resolvable image");
        }
        AgentContext ctx{deps.chat, planner_meter, deps.prompts};
        CallOptions opts;
        opts.temperature = cfg.planner_temperature;
        opts.seed = cfg.seed;
        opts.max_tokens = cfg.max_tokens;
        auto decision = run_planner(sample, ctx, opts, cfg.planner_fallback);
        trace.planner_ran = true;
        trace.plan_level = decision.level;
        if (decision.warning) trace.warnings.push_back(*decision.warning);
        break;
      }
      case Routing::AlwaysStandard: trace.plan_level = PlanLevel::Level0; break;
      case Routing::AlwaysBoN: trace.plan_level = PlanLevel::Level1; break;
    }
    mode = trace.plan_level == PlanLevel::Level1 ? StageMode::BoN : StageMode::Standard;

    SampleTools tools(deps.tools, sample);
    std::optional<Verdict> text_verdict;
    std::optional<Verdict> image_verdict;
    std::vector<Verdict> activated_verdicts;

    for (; next_stage < kCascadeOrder.size(); ++next_stage) {
      const Stage stage = kCascadeOrder[next_stage];
      const auto flags = activation_flags(text_verdict, image_verdict);
      if (flags[stage] == 0) {
        trace.stage_traces.push_back(inactive(stage, mode));
        continue;
      }
      StageEnv env{sample, cfg, deps, tools, stage_meters[stage_slot(stage)]};
      StageTrace st = run_stage(stage, mode, env, trace.warnings);
      activated_verdicts.push_back(*st.verdict);
      if (stage == Stage::Text) text_verdict = st.verdict;
      if (stage == Stage::Image) image_verdict = st.verdict;
      trace.stage_traces.push_back(std::move(st));
    }

    trace.final_label = assemble_final_label(activated_verdicts);
  } catch (const ContractViolation&) {
    throw;
  } catch (const std::exception& e) {
    if (const auto* sf = dynamic_cast<const StageFailure*>(&e)) {
      for (const auto& w : sf->warnings) trace.warnings.push_back(w);
    }
    // Record the failing stage (if any) as activated without a verdict and
    // everything after it as skipped.
    if (next_stage < kCascadeOrder.size() && trace.stage_traces.size() == next_stage) {
      StageTrace failed;
      failed.stage = kCascadeOrder[next_stage];
      failed.activated = true;
      failed.mode = mode;
      trace.stage_traces.push_back(std::move(failed));
      ++next_stage;
    }
    for (; next_stage < kCascadeOrder.size(); ++next_stage) {
      trace.stage_traces.push_back(inactive(kCascadeOrder[next_stage], mode));
    }
    trace.status = TraceStatus::Failed;
    trace.error = e.what();
    snapshot_costs();
    trace.wall_time_ms = now_ms(deps) - start;
    throw PipelineError(e.what(), std::move(trace));
  }

  snapshot_costs();
  trace.wall_time_ms = now_ms(deps) - start;
  return trace;
}

std::vector<PipelineTrace> run_batch(std::span<const Sample> samples, const PipelineConfig& cfg,
                                     const PipelineDeps& deps, int parallelism) {
  if (parallelism < 1) throw ContractViolation("run_batch: parallelism must be >= 1");
  cfg.validate();
  std::vector<PipelineTrace> out(samples.size());
  auto run_one = [&](std::size_t i) {
    try {
      out[i] = run_pipeline(samples[i], cfg, deps);
    } catch (const PipelineError& e) {
      out[i] = e.partial;
    } catch (const std::exception& e) {
      PipelineTrace t;
      t.sample_id = samples[i].id;
      t.status = TraceStatus::Failed;
      t.error = e.what();
      t.config_echo = config_to_json(cfg).dump();
      for (Stage s : kCascadeOrder) t.stage_traces.push_back(inactive(s, StageMode::Standard));
      out[i] = std::move(t);
    }
  };
  const auto workers = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(parallelism));
  if (workers <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next.fetch_add(1); i < samples.size(); i = next.fetch_add(1)) run_one(i);
      });
    }
  }
  return out;
}

}  // namespace m3d
