// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "m3d/agents.hpp"
#include "m3d/cascade.hpp"
#include "m3d/errors.hpp"
#include "m3d/evalkit.hpp"
#include "m3d/http_backends.hpp"
#include "m3d/live_tools.hpp"
#include "m3d/mock.hpp"
#include "m3d/trace_json.hpp"

namespace m3d::cli {
namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::string> system_env(const char* name) {
  if (const char* v = std::getenv(name); v != nullptr && *v != '\0') return std::string(v);
  return std::nullopt;
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flag values as given on the command line; unset means "not overridden".
struct Flags {
  std::string config_path;
  std::optional<std::string> mode;
  std::optional<std::string> bon_mode;
  std::optional<std::string> selection;
  std::optional<std::string> tau;
  std::optional<std::string> planner_fallback;
  std::optional<int> n;
  std::optional<int> concurrency;
  std::optional<int> max_tokens;
  std::optional<double> beta;
  std::optional<double> temperature;
  std::optional<std::int64_t> seed;
  std::optional<std::string> backend_url;
  std::optional<std::string> reward_url;
  std::optional<std::string> forgery_url;
  std::optional<std::string> search_url;
  std::optional<std::string> model;
  std::optional<std::string> templates_dir;
  std::optional<std::string> mock_fixtures;
  int parallelism = 1;
};

template <typename T>
CLI::Option* optional_flag(CLI::App& app, const std::string& name, std::optional<T>& slot, const std::string& desc) {
  return app.add_option_function<T>(name, [&slot](const T& v) { slot = v; }, desc);
}

double parse_tau(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--tau: expected a number or 'inf', got '" + s + "'");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto doc = json::parse(ss.str(), nullptr, false);
  if (doc.is_discarded()) throw UsageError(path.string() + ": malformed JSON");
  return doc;
}

/// defaults < config file < environment < flags
PipelineConfig build_config(const Flags& f, const EnvLookup& env) {
  PipelineConfig cfg;
  try {
    if (!f.config_path.empty()) cfg = config_from_json(read_json_file(f.config_path), cfg);

    auto& ep = cfg.endpoints;
    if (auto v = env("M3D_BACKEND_URL")) ep.backend_url = *v;
    if (auto v = env("M3D_REWARD_URL")) ep.reward_url = *v;
    if (auto v = env("M3D_FORGERY_URL")) ep.forgery_url = *v;
    if (auto v = env("M3D_TEMPLATES_DIR")) ep.templates_dir = *v;

    if (f.mode) {
      auto r = parse_routing(*f.mode);
      if (!r) throw UsageError("--mode: expected standard|bon|planner");
      cfg.routing = *r;
    }
    if (f.bon_mode) {
      auto m = parse_bon_mode(*f.bon_mode);
      if (!m) throw UsageError("--bon-mode: expected faithful|incremental");
      cfg.bon.mode = *m;
    }
    if (f.selection) {
      auto s = parse_selection(*f.selection);
      if (!s) throw UsageError("--selection: expected argmax|boltzmann");
      cfg.bon.selection = *s;
    }
    if (f.planner_fallback) {
      auto l = parse_plan_level(*f.planner_fallback);
      if (!l) throw UsageError("--planner-fallback: expected Level0|Level1");
      cfg.planner_fallback = *l;
    }
    if (f.tau) cfg.bon.tau = parse_tau(*f.tau);
    if (f.n) cfg.bon.n_candidates = *f.n;
    if (f.concurrency) cfg.bon.concurrency_limit = *f.concurrency;
    if (f.beta) cfg.bon.beta = *f.beta;
    if (f.temperature) cfg.bon.temperature = *f.temperature;
    if (f.max_tokens) cfg.max_tokens = *f.max_tokens;
    if (f.seed) cfg.seed = *f.seed;
    if (f.backend_url) ep.backend_url = *f.backend_url;
    if (f.reward_url) ep.reward_url = *f.reward_url;
    if (f.forgery_url) ep.forgery_url = *f.forgery_url;
    if (f.search_url) ep.search_url = *f.search_url;
    if (f.model) ep.model = *f.model;
    if (f.templates_dir) ep.templates_dir = *f.templates_dir;
    if (f.mock_fixtures) ep.fixtures_dir = *f.mock_fixtures;

    cfg.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  if (f.parallelism < 1) throw UsageError("--parallelism must be >= 1");
  return cfg;
}

class NoSearch final : public SearchService {
 public:
  std::string search(const std::string&, const std::string&) override {
    throw BackendUnavailable("no search endpoint configured");
  }
};

class NoForgery final : public ForgeryService {
 public:
  double detect(const ImageRef&, const std::string&) override {
    throw BackendUnavailable("no forgery endpoint configured");
  }
};

class NoReward final : public RewardBackend {
 public:
  double score_reward(const RewardRequest&) override {
    throw RewardBackendUnavailable("no reward endpoint configured");
  }
};

/// Owns the backends behind a PipelineDeps.
struct Runtime {
  std::unique_ptr<FixtureStore> store;
  std::unique_ptr<ChatBackend> chat;
  std::unique_ptr<RewardBackend> reward;
  std::unique_ptr<SearchService> search;
  std::unique_ptr<ForgeryService> forgery;
  std::unique_ptr<Toolset> tools;
  PromptLibrary prompts;
  bool mock = false;

  PipelineDeps deps() const {
    PipelineDeps d{*chat, *reward, *tools, prompts, {}};
    // Constant clock keeps mock traces byte-stable.
    if (mock) d.clock_ms = [] { return std::int64_t{0}; };
    return d;
  }
};

std::unique_ptr<Runtime> build_runtime(const PipelineConfig& cfg, const EnvLookup& env) {
  auto rt = std::make_unique<Runtime>();
  const auto& ep = cfg.endpoints;
  if (!ep.templates_dir.empty()) {
    if (!fs::is_directory(ep.templates_dir)) {
      throw UsageError("templates directory not found: " + ep.templates_dir);
    }
    rt->prompts = PromptLibrary::with_overrides(ep.templates_dir);
  }

  if (!ep.fixtures_dir.empty()) {
    if (!fs::is_directory(ep.fixtures_dir)) {
      throw UsageError("fixtures directory not found: " + ep.fixtures_dir);
    }
    rt->mock = true;
    rt->store = std::make_unique<FixtureStore>(FixtureStore::load_directory(ep.fixtures_dir));
    rt->chat = std::make_unique<ScriptedChat>(*rt->store);
    rt->reward = std::make_unique<ScriptedReward>(*rt->store);
    rt->search = std::make_unique<ScriptedSearch>(*rt->store);
    rt->forgery = std::make_unique<ScriptedForgery>(*rt->store);
  } else {
    if (ep.backend_url.empty()) {
      throw UsageError("no chat backend: pass --backend-url, set M3D_BACKEND_URL, or use --mock-fixtures");
    }
    HttpChatOptions chat;
    chat.base_url = ep.backend_url;
    chat.model = ep.model;
    if (auto key = env("M3D_API_KEY")) chat.api_key = *key;
    rt->chat = std::make_unique<OpenAiChatBackend>(chat);

    if (!ep.reward_url.empty()) {
      HttpRewardOptions reward;
      reward.reward_url = ep.reward_url;
      rt->reward = std::make_unique<HttpRewardBackend>(reward);
    } else if (cfg.routing == Routing::AlwaysStandard) {
      rt->reward = std::make_unique<NoReward>();
    } else {
      throw UsageError("BoN routing needs a reward model: pass --reward-url or set M3D_REWARD_URL");
    }

    if (!ep.search_url.empty()) {
      SearchOptions search;
      search.endpoint = ep.search_url;
      rt->search = std::make_unique<EncyclopediaSearch>(search);
    } else {
      rt->search = std::make_unique<NoSearch>();
    }
    if (!ep.forgery_url.empty()) {
      ForgeryOptions forgery;
      forgery.forgery_url = ep.forgery_url;
      rt->forgery = std::make_unique<HttpForgeryDetector>(forgery);
    } else {
      rt->forgery = std::make_unique<NoForgery>();
    }
  }

  ToolsetOptions topts;
  topts.char_cap = cfg.tool_char_cap;
  rt->tools = std::make_unique<Toolset>(*rt->search, *rt->forgery, *rt->chat, topts);
  return rt;
}

/// Relative image paths in a dataset are looked up next to the dataset
/// file when they do not exist relative to the working directory.
void resolve_images(Sample& s, const fs::path& base) {
  if (s.image.kind != ImageRef::Kind::Path) return;
  const fs::path p(s.image.value);
  std::error_code ec;
  if (p.is_absolute() || fs::exists(p, ec)) return;
  const auto candidate = base / p;
  if (fs::exists(candidate, ec)) s.image.value = candidate.string();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string verdict_word(const Verdict& v) { return v.is_distorted ? "distorted" : "original"; }

std::string stage_summary(const StageTrace& st) {
  std::string line = std::string(stage_name(st.stage)) + ": ";
  if (!st.activated) return line + "skipped";
  line += std::string(stage_mode_name(st.mode));
  line += " candidates=" + std::to_string(st.candidates.size());
  if (st.stopping_prefix) line += " m*=" + std::to_string(*st.stopping_prefix);
  if (st.selected_index) line += " selected=" + std::to_string(*st.selected_index);
  line += " verdict=" + (st.verdict ? verdict_word(*st.verdict) : std::string("none"));
  return line;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

void write_trace_file(const fs::path& path, const PipelineTrace& trace) {
  write_text(path, to_json(trace).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct RunArgs {
  std::string input;
  std::string id = "cli";
  std::string text;
  std::string image;
  std::string trace;
};

int cmd_run(const RunArgs& a, const Flags& flags, const EnvLookup& env, std::ostream& out,
            std::ostream& err) {
  if (a.input.empty() == a.text.empty()) throw UsageError("run: pass exactly one of --input or --text");
  const auto cfg = build_config(flags, env);

  Sample sample;
  if (!a.input.empty()) {
    json doc;
    try {
      doc = read_json_file(a.input);
    } catch (const UsageError& e) {
      throw InputError(e.what());
    }
    sample = sample_from_json(doc, DatasetFieldMap{}, a.input);
    resolve_images(sample, fs::path(a.input).parent_path());
  } else {
    sample.id = a.id;
    sample.text = a.text;
    sample.image = ImageRef::from_string(a.image);
  }

  auto rt = build_runtime(cfg, env);
  PipelineTrace trace;
  try {
    trace = run_pipeline(sample, cfg, rt->deps());
  } catch (const PipelineError& e) {
    err << "error: " << e.what() << "\n";
    if (!a.trace.empty()) write_trace_file(a.trace, e.partial);
    return kExitFailure;
  }
  for (const auto& w : trace.warnings) err << "warning: " << w << "\n";
  out << label_name(*trace.final_label) << "\n";
  if (trace.plan_level) {
    out << "plan: " << plan_level_name(*trace.plan_level) << (trace.planner_ran ? " (planner)" : "")
        << "\n";
  }
  for (const auto& st : trace.stage_traces) out << stage_summary(st) << "\n";
  if (!a.trace.empty()) write_trace_file(a.trace, trace);
  return kExitOk;
}

struct EvalArgs {
  std::string dataset;
  std::string report;
  std::string traces;
  bool overwrite = false;
  bool per_sample = false;
};

int cmd_eval(const EvalArgs& a, const Flags& flags, const EnvLookup& env, std::ostream& out,
             std::ostream& err) {
  const auto cfg = build_config(flags, env);
  std::error_code ec;
  if (!a.overwrite && fs::exists(a.report, ec)) {
    throw UsageError("report exists: " + a.report + " (pass --overwrite)");
  }
  if (!a.overwrite && !a.traces.empty() && fs::exists(a.traces, ec)) {
    throw UsageError("traces file exists: " + a.traces + " (pass --overwrite)");
  }

  auto samples = load_dataset(a.dataset);
  if (samples.empty()) throw InputError(a.dataset + ": no samples");
  const auto base = fs::path(a.dataset).parent_path();
  for (auto& s : samples) {
    if (!s.gold_label) throw InputError(a.dataset + ": sample '" + s.id + "' has no label");
    resolve_images(s, base);
  }

  auto rt = build_runtime(cfg, env);
  const auto traces = run_batch(samples, cfg, rt->deps(), flags.parallelism);

  std::vector<Label> preds;
  std::vector<Label> golds;
  std::int64_t failed = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    if (t.status != TraceStatus::Ok) {
      ++failed;
      err << "error: " << t.sample_id << ": " << t.error.value_or("failed") << "\n";
      continue;
    }
    preds.push_back(*t.final_label);
    golds.push_back(*samples[i].gold_label);
  }
  std::optional<MetricsReport> metrics;
  if (!preds.empty()) metrics = compute_metrics(preds, golds);
  const auto costs = aggregate_costs(traces);
  const auto report = build_report(metrics, costs, config_to_json(cfg),
                                   a.per_sample ? std::span<const PipelineTrace>(traces)
                                                : std::span<const PipelineTrace>());
  emit_report(report, a.report, a.overwrite);

  if (!a.traces.empty()) {
    std::string lines;
    for (const auto& t : traces) lines += serialize_trace(t) + "\n";
    write_text(a.traces, lines);
  }

  out << "samples: " << traces.size() << " (failed " << failed << ")\n";
  if (metrics) {
    out << "accuracy: " << fmt(metrics->accuracy) << "\n";
    out << "macro_f1: " << fmt(metrics->macro_f1) << "\n";
  }
  out << "mean_chat_calls: " << fmt(costs.mean_chat_calls) << "\n";
  out << "bon_activation_ratio: " << fmt(costs.bon_activation_ratio) << "\n";
  out << "report: " << a.report << "\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

struct InspectArgs {
  std::string path;
  std::string stage;
};

void render_trace(const PipelineTrace& t, std::optional<Stage> only, std::ostream& out) {
  out << "sample " << t.sample_id << "  status=" << (t.status == TraceStatus::Ok ? "ok" : "failed");
  if (t.plan_level) {
    out << "  plan=" << plan_level_name(*t.plan_level) << (t.planner_ran ? " (planner)" : " (forced)");
  }
  out << "\n";
  if (t.error) out << "  error: " << *t.error << "\n";
  for (const auto& st : t.stage_traces) {
    if (only && st.stage != *only) continue;
    out << "  " << stage_summary(st) << "\n";
    for (std::size_t pos = 0; pos < st.candidates.size(); ++pos) {
      const auto& c = st.candidates[pos];
      out << "    #" << c.index;
      if (c.reward_norm) out << "  u=" << fmt(*c.reward_norm);
      if (c.reward_raw) out << " (raw " << fmt(*c.reward_raw) << ")";
      if (c.critique) out << "  q=" << fmt(*c.critique);
      if (c.fused) out << "  s=" << fmt(*c.fused);
      out << "  " << verdict_word(c.verdict);
      if (st.selected_index && static_cast<std::size_t>(*st.selected_index) == pos) out << "  <- selected";
      out << "\n";
    }
  }
  if (!only) {
    out << "  final: " << (t.final_label ? std::string(label_name(*t.final_label)) : std::string("none"))
        << "\n";
    for (const auto& w : t.warnings) out << "  warning: " << w << "\n";
  }
}

PipelineTrace checked_trace(const json& doc, const std::string& where) {
  const auto problems = validate_trace_json(doc);
  if (!problems.empty()) throw TraceFormatError(where + ": " + problems.front());
  return trace_from_json(doc);
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  std::optional<Stage> only;
  if (!a.stage.empty()) {
    only = parse_stage(a.stage);
    if (!only) throw UsageError("--stage: expected text|image|cross");
  }
  std::ifstream in(a.path, std::ios::binary);
  if (!in) throw InputError("cannot open " + a.path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();

  std::vector<PipelineTrace> traces;
  auto whole = json::parse(body, nullptr, false);
  if (!whole.is_discarded()) {
    traces.push_back(checked_trace(whole, a.path));
  } else {
    std::istringstream lines(body);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto where = a.path + ":" + std::to_string(lineno);
      auto doc = json::parse(line, nullptr, false);
      if (doc.is_discarded()) throw TraceFormatError(where + ": malformed JSON");
      traces.push_back(checked_trace(doc, where));
    }
  }
  if (traces.empty()) throw TraceFormatError(a.path + ": no traces");
  for (const auto& t : traces) render_trace(t, only, out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env) {
  CLI::App app("Planner-gated Best-of-N cascade for four-way news misinformation labels", "m3d");
  app.require_subcommand(1);
  app.fallthrough();

  Flags flags;
  app.add_option("--config", flags.config_path, "JSON configuration file");
  optional_flag(app, "--mode", flags.mode, "Routing: planner|standard|bon");
  optional_flag(app, "--bon-mode", flags.bon_mode, "faithful|incremental");
  optional_flag(app, "--n", flags.n, "Candidates per BoN stage");
  optional_flag(app, "--tau", flags.tau, "Early-stopping threshold (number or 'inf')");
  optional_flag(app, "--selection", flags.selection, "argmax|boltzmann");
  optional_flag(app, "--beta", flags.beta, "Boltzmann inverse temperature");
  optional_flag(app, "--concurrency", flags.concurrency, "Concurrent candidates within a stage");
  optional_flag(app, "--temperature", flags.temperature, "Sampling temperature for BoN candidates");
  optional_flag(app, "--max-tokens", flags.max_tokens, "Completion token limit");
  optional_flag(app, "--planner-fallback", flags.planner_fallback, "Level used when the planner reply is unusable");
  optional_flag(app, "--seed", flags.seed, "Base seed for candidates and Boltzmann sampling");
  optional_flag(app, "--backend-url", flags.backend_url, "OpenAI-compatible chat endpoint base URL");
  optional_flag(app, "--reward-url", flags.reward_url, "Reward service base URL");
  optional_flag(app, "--forgery-url", flags.forgery_url, "Forgery detector base URL");
  optional_flag(app, "--search-url", flags.search_url, "MediaWiki search API URL");
  optional_flag(app, "--model", flags.model, "Model name sent to the chat endpoint");
  optional_flag(app, "--templates-dir", flags.templates_dir, "Directory of <template_id>.txt overrides");
  optional_flag(app, "--mock-fixtures", flags.mock_fixtures, "Run against scripted fixtures in this directory");
  app.add_option("--parallelism", flags.parallelism, "Samples processed concurrently")
      ->capture_default_str();

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Classify one sample");
  run->add_option("--input", run_args.input, "Sample JSON file {id, text, image, label?}");
  run->add_option("--id", run_args.id, "Sample id for inline input")->capture_default_str();
  run->add_option("--text", run_args.text, "Inline claim text");
  run->add_option("--image", run_args.image, "Inline image path, URL or base64: payload");
  run->add_option("--trace", run_args.trace, "Write the trace JSON here");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a labeled JSONL dataset");
  eval->add_option("--dataset", eval_args.dataset, "JSONL dataset")->required();
  eval->add_option("--report", eval_args.report, "Report JSON output path")->required();
  eval->add_option("--traces", eval_args.traces, "Trace JSONL output path");
  eval->add_flag("--overwrite", eval_args.overwrite, "Replace existing outputs");
  eval->add_flag("--per-sample", eval_args.per_sample, "Include per-sample rows in the report");

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect", "Render a trace file");
  inspect->add_option("trace", inspect_args.path, "Trace JSON or JSONL file")->required();
  inspect->add_option("--stage", inspect_args.stage, "Only show this stage (text|image|cross)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(run_args, flags, env, out, err);
    if (eval->parsed()) return cmd_eval(eval_args, flags, env, out, err);
    if (inspect->parsed()) return cmd_inspect(inspect_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace m3d::cli
