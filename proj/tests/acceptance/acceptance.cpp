// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. Exit status reflects
// criteria 1-9; criterion 10 (live wiring smoke) is reported only.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "fixture_builder.hpp"
#include "m3d/bon.hpp"
#include "m3d/cascade.hpp"
#include "m3d/evalkit.hpp"
#include "m3d/trace_json.hpp"
#include "oracles.hpp"
#include "scripted_worker.hpp"
#include "stub_server.hpp"

namespace m3d {
namespace {

using Clock = std::chrono::steady_clock;
using testkit::MockWorld;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

PipelineConfig routed(Routing r) {
  PipelineConfig cfg;
  cfg.routing = r;
  return cfg;
}

std::int64_t total_chat(const std::vector<PipelineTrace>& traces) {
  std::int64_t n = 0;
  for (const auto& t : traces) n += t.cost.total().chat_calls;
  return n;
}

bool all_ok(const std::vector<PipelineTrace>& traces) {
  for (const auto& t : traces) {
    if (t.status != TraceStatus::Ok) return false;
  }
  return true;
}

// 1 -------------------------------------------------------------------------

Outcome cascade_conformance() {
  MockWorld w;
  const auto samples = testkit::conformance_suite(w.store);
  const auto t0 = Clock::now();
  int correct = 0;
  for (Routing r : {Routing::Planner, Routing::AlwaysBoN, Routing::AlwaysStandard}) {
    correct = 0;
    for (const auto& s : samples) {
      const auto t = run_pipeline(s, routed(r), w.deps());
      if (t.final_label == s.gold_label) ++correct;
      for (const auto& st : t.stage_traces) {
        if (!st.activated && !t.cost.stage(st.stage).is_zero()) {
          return fail(s.id + ": skipped " + std::string(stage_name(st.stage)) + " stage has cost");
        }
      }
    }
    if (correct != 12) return fail(std::string(routing_name(r)) + ": " + std::to_string(correct) + "/12");
  }
  const double secs = seconds_since(t0);
  if (secs >= 1.0) return fail("took " + num(secs) + " s");
  return {true, "12/12 under each routing, " + num(secs) + " s"};
}

// 2 -------------------------------------------------------------------------

Outcome stopping_oracle() {
  const std::vector<double> taus{-0.5, 0.0, 0.1, 0.3, 0.5, 0.7, 10.0};
  std::mt19937_64 rng(20260401);
  std::uniform_int_distribution<int> len(2, 8);
  std::uniform_real_distribution<double> val(-1.0, 2.0);
  const auto t0 = Clock::now();
  std::int64_t checks = 0;
  for (int v = 0; v < 10000; ++v) {
    std::vector<double> scores(static_cast<std::size_t>(len(rng)));
    for (auto& x : scores) x = (v % 3 == 0) ? std::round(val(rng) * 10.0) / 10.0 : val(rng);
    for (double tau : taus) {
      const int got = stopping_index(scores, tau);
      const int want = oracle::stopping_index(scores, tau);
      ++checks;
      if (got != want) return fail("vector " + std::to_string(v) + " tau " + num(tau));
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 5.0) return fail("took " + num(secs) + " s");
  return {true, std::to_string(checks) + " checks, " + num(secs) + " s"};
}

// 3 -------------------------------------------------------------------------

Outcome selection_oracle() {
  const std::vector<double> hand{0.9, 0.5, 0.4, 0.3, 0.2};
  if (stopping_index(hand, 0.3) != 2) return fail("hand case tau=0.3");
  if (stopping_index(hand, 0.5) != 5) return fail("hand case tau=0.5");
  {
    BonConfig cfg;
    cfg.mode = BonMode::Faithful;
    cfg.n_candidates = 5;
    cfg.tau = 0.3;
    testkit::ScriptedWorker w(Stage::Text, {1, 1, 1, 1, 1}, {0.2, 0.9, 0.5, 0.4, 0.3});
    const auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), cfg, w);
    if (out.trace.selected_index != 1 || out.trace.stopping_prefix != 2) return fail("faithful hand case");
  }

  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> len(1, 8);
  std::uniform_int_distribution<int> reward_step(-100, 100);  // ties are common
  std::uniform_int_distribution<int> critique_step(0, 10);
  const std::vector<double> taus{-0.5, 0.0, 0.1, 0.3, 0.5, 0.7, 10.0};
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = len(rng);
    const Stage stage = kCascadeOrder[static_cast<std::size_t>(trial % 3)];
    std::vector<double> rewards(static_cast<std::size_t>(n));
    std::vector<double> critiques(rewards.size());
    for (auto& r : rewards) r = reward_step(rng) / 50.0;
    for (auto& q : critiques) q = critique_step(rng) / 10.0;
    BonConfig cfg;
    cfg.mode = BonMode::Faithful;
    cfg.n_candidates = n;
    cfg.tau = taus[static_cast<std::size_t>(trial) % taus.size()];
    testkit::ScriptedWorker w(stage, rewards, critiques);
    const auto out = run_bon_stage(StageScoringPlan::for_stage(stage), cfg, w);

    // Oracle: min-max, fuse, brute-force argmax with lowest index.
    double lo = rewards[0], hi = rewards[0];
    for (double r : rewards) {
      lo = r < lo ? r : lo;
      hi = r > hi ? r : hi;
    }
    std::vector<double> fused;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      const double u = hi == lo ? 0.5 : (rewards[i] - lo) / (hi - lo);
      fused.push_back(stage == Stage::Cross ? u : u + critiques[i]);
    }
    const auto want = static_cast<int>(oracle::argmax_lowest(fused));
    if (out.trace.selected_index != want) {
      return fail("trial " + std::to_string(trial) + ": selected " +
                  std::to_string(out.trace.selected_index.value_or(-1)) + ", oracle " + std::to_string(want));
    }
    if (out.trace.stopping_prefix != oracle::stopping_index(fused, cfg.tau)) {
      return fail("trial " + std::to_string(trial) + ": m* mismatch");
    }
  }
  return {true, "hand cases + 10000 random sets"};
}

// 4 / 5 / 6 shared fixture set ----------------------------------------------

struct FixtureSet {
  MockWorld world;
  std::vector<Sample> samples;
  FixtureSet() { samples = testkit::random_suite(world.store, 50, 4242); }
};

FixtureSet& fixture_set() {
  static FixtureSet set;
  return set;
}

std::vector<PipelineTrace>& collected_traces() {
  static std::vector<PipelineTrace> traces;
  return traces;
}

std::vector<PipelineTrace> run_set(const PipelineConfig& cfg) {
  auto& set = fixture_set();
  auto traces = run_batch(set.samples, cfg, set.world.deps(), 4);
  auto& sink = collected_traces();
  sink.insert(sink.end(), traces.begin(), traces.end());
  return traces;
}

Outcome tau_monotonicity() {
  double prev_cands = -1.0;
  double prev_ratio = 2.0;
  std::string detail;
  for (double tau : {0.1, 0.3, 0.5, 0.7}) {
    auto cfg = routed(Routing::AlwaysBoN);
    cfg.bon.mode = BonMode::Incremental;
    cfg.bon.tau = tau;
    const auto traces = run_set(cfg);
    if (!all_ok(traces)) return fail("failed samples at tau " + num(tau));
    const auto c = aggregate_costs(traces);
    const double cands = c.mean_candidates[0] + c.mean_candidates[1] + c.mean_candidates[2];
    detail += "tau=" + num(tau) + " cands=" + num(cands) + " early=" + num(c.early_stop_ratio) + "; ";
    if (cands < prev_cands) return fail("mean candidates decreased: " + detail);
    if (c.early_stop_ratio > prev_ratio) return fail("early-stop ratio increased: " + detail);
    prev_cands = cands;
    prev_ratio = c.early_stop_ratio;
  }
  return {true, detail};
}

Outcome ablation_direction() {
  auto cfg = routed(Routing::AlwaysBoN);
  cfg.bon.mode = BonMode::Incremental;
  cfg.bon.tau = 0.3;
  const auto with_esr = total_chat(run_set(cfg));
  cfg.bon.tau = std::numeric_limits<double>::infinity();
  const auto without_esr = total_chat(run_set(cfg));
  if (!(without_esr > with_esr)) {
    return fail("tau=inf " + std::to_string(without_esr) + " vs tau=0.3 " + std::to_string(with_esr));
  }

  MockWorld w;
  std::vector<Sample> mixed;
  for (int k = 0; k < 40; ++k) {
    testkit::ScriptOptions o;
    o.plan = k % 3 == 0 ? PlanLevel::Level1 : PlanLevel::Level0;
    mixed.push_back(testkit::script_sample(w.store, "m" + std::to_string(k), kAllLabels[k % 4], o));
  }
  const auto planner = run_batch(mixed, routed(Routing::Planner), w.deps(), 4);
  const auto always = run_batch(mixed, routed(Routing::AlwaysBoN), w.deps(), 4);
  if (!all_ok(planner) || !all_ok(always)) return fail("failed samples in routing ablation");
  const auto planner_calls = total_chat(planner);
  const auto always_calls = total_chat(always);
  if (!(always_calls > planner_calls)) {
    return fail("AlwaysBoN " + std::to_string(always_calls) + " vs Planner " + std::to_string(planner_calls));
  }
  return {true, "chat calls: tau=inf " + std::to_string(without_esr) + " > tau=0.3 " + std::to_string(with_esr) +
                    "; AlwaysBoN " + std::to_string(always_calls) + " > Planner " + std::to_string(planner_calls)};
}

Outcome fusion_and_normalization() {
  // Faithful runs and a constant-reward batch join the traces collected above.
  auto cfg = routed(Routing::AlwaysBoN);
  cfg.bon.mode = BonMode::Faithful;
  run_set(cfg);
  {
    MockWorld w;
    testkit::ScriptOptions o;
    o.reward = [](Stage, int) { return 0.25; };
    const auto flat = testkit::conformance_suite(w.store, o);
    const auto traces = run_batch(flat, cfg, w.deps(), 2);
    auto& sink = collected_traces();
    sink.insert(sink.end(), traces.begin(), traces.end());
  }

  std::int64_t checked = 0;
  std::int64_t degenerate = 0;
  for (const auto& t : collected_traces()) {
    for (const auto& st : t.stage_traces) {
      if (!st.activated || st.mode != StageMode::BoN) continue;
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const auto& c : st.candidates) {
        lo = std::min(lo, *c.reward_raw);
        hi = std::max(hi, *c.reward_raw);
      }
      if (hi == lo) ++degenerate;
      for (const auto& c : st.candidates) {
        if (!c.reward_norm || !c.fused || !c.reward_raw) return fail(t.sample_id + ": missing scores");
        const double u = *c.reward_norm;
        if (u < 0.0 || u > 1.0) return fail(t.sample_id + ": normalized reward out of range");
        const double want_u = hi == lo ? 0.5 : (*c.reward_raw - lo) / (hi - lo);
        if (u != want_u) return fail(t.sample_id + ": normalization mismatch");
        const bool needs_critique = st.stage != Stage::Cross;
        if (c.critique.has_value() != needs_critique) return fail(t.sample_id + ": critique presence");
        const double want = needs_critique ? u + *c.critique : u;
        if (*c.fused != want) return fail(t.sample_id + ": fused score mismatch");
        ++checked;
      }
    }
  }
  if (degenerate == 0) return fail("no constant-reward stage exercised");

  std::mt19937_64 rng(61);
  std::uniform_int_distribution<int> len(1, 10);
  std::uniform_int_distribution<int> step(-1000, 1000);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> raw(static_cast<std::size_t>(len(rng)));
    for (auto& r : raw) r = step(rng) / 100.0;
    const auto norm = normalize_rewards(raw);
    std::vector<Candidate> cands(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (norm[i] < 0.0 || norm[i] > 1.0) return fail("normalize out of range");
      cands[i].fused = fuse_score(norm[i], std::nullopt);
    }
    if (select_argmax(cands) != oracle::argmax_lowest(raw)) {
      return fail("argmax changed under normalization, trial " + std::to_string(trial));
    }
  }
  return {true, std::to_string(checked) + " candidates checked (" + std::to_string(degenerate) +
                    " constant stages); 10000 invariance trials"};
}

// 7 -------------------------------------------------------------------------

Outcome metrics_oracle() {
  {
    const std::vector<Label> gold{Label::Original, Label::Original, Label::TVD, Label::VVD};
    const std::vector<Label> pred{Label::Original, Label::TVD, Label::TVD, Label::VVD};
    const auto m = compute_metrics(pred, gold);
    // Hand-derived: P = (1, 1/2, 1, 0), R = (1/2, 1, 1, 0), F1 = (2/3, 2/3, 1, 0).
    if (m.accuracy != 0.75 || m.macro_precision != 0.625 || m.macro_recall != 0.625 ||
        m.macro_f1 != (2.0 / 3.0 + 2.0 / 3.0 + 1.0 + 0.0) / 4.0) {
      return fail("4-sample hand case");
    }
  }
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cls(0, 3);
  std::uniform_int_distribution<int> len(1, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::vector<Label> pred, gold;
    for (int i = 0; i < n; ++i) {
      pred.push_back(static_cast<Label>(cls(rng)));
      gold.push_back(static_cast<Label>(cls(rng)));
    }
    const auto m = compute_metrics(pred, gold);
    const auto counts = oracle::class_counts(pred, gold);
    double ps = 0, rs = 0, fs = 0;
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& c = counts[k];
      const double p = c.tp + c.fp == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fp);
      const double r = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fn);
      const double f = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
      if (m.per_class[k].precision != p || m.per_class[k].recall != r || m.per_class[k].f1 != f) {
        return fail("per-class mismatch, trial " + std::to_string(trial));
      }
      ps += p;
      rs += r;
      fs += f;
      tp += c.tp;
    }
    if (m.macro_precision != ps / 4 || m.macro_recall != rs / 4 || m.macro_f1 != fs / 4 ||
        m.accuracy != double(tp) / double(n)) {
      return fail("macro mismatch, trial " + std::to_string(trial));
    }
  }
  return {true, "1000 random pairs + hand case"};
}

// 8 -------------------------------------------------------------------------

Outcome activation_ratio() {
  MockWorld w;
  std::vector<Sample> samples;
  int level1 = 0;
  for (int k = 0; k < 1000; ++k) {
    testkit::ScriptOptions o;
    o.n = 2;
    // 7 is coprime with 1000, so exactly 691 residues fall below 691.
    o.plan = (k * 7) % 1000 < 691 ? PlanLevel::Level1 : PlanLevel::Level0;
    level1 += o.plan == PlanLevel::Level1;
    samples.push_back(testkit::script_sample(w.store, "a" + std::to_string(k), kAllLabels[k % 4], o));
  }
  if (level1 != 691) return fail("fixture scripting produced " + std::to_string(level1));
  auto cfg = routed(Routing::Planner);
  cfg.bon.n_candidates = 2;
  const auto traces = run_batch(samples, cfg, w.deps(), 8);
  if (!all_ok(traces)) return fail("failed samples");
  const auto costs = aggregate_costs(traces);
  const auto reported = to_json(costs)["bon_activation_ratio"].get<double>();
  if (costs.bon_activation_ratio != 0.691 || reported != 0.691) {
    return fail("ratio " + num(costs.bon_activation_ratio));
  }
  return {true, "bon_activation_ratio = 0.691"};
}

// 9 -------------------------------------------------------------------------

Outcome determinism() {
  testkit::TempDir dir;
  FixtureStore store;
  const auto samples = testkit::random_suite(store, 40, 99);
  store.save_directory(dir / "fixtures");
  testkit::write_dataset(dir / "data.jsonl", samples);

  std::vector<std::string> outputs;
  int run = 0;
  for (const char* par : {"1", "1", "8", "8"}) {
    const auto tag = std::to_string(run++);
    const auto report = (dir / ("report" + tag + ".json")).string();
    const auto traces = (dir / ("traces" + tag + ".jsonl")).string();
    std::ostringstream out, err;
    const int code = cli::run_cli({"eval", "--dataset", (dir / "data.jsonl").string(), "--report", report,
                                   "--traces", traces, "--mock-fixtures", (dir / "fixtures").string(),
                                   "--parallelism", par, "--selection", "boltzmann", "--seed", "5",
                                   "--per-sample"},
                                  out, err, [](const char*) { return std::optional<std::string>(); });
    if (code != cli::kExitOk) return fail("eval exited " + std::to_string(code) + ": " + err.str());
    outputs.push_back(testkit::read_file(report) + "\n--\n" + testkit::read_file(traces));
  }
  for (const auto& o : outputs) {
    if (o != outputs[0]) return fail("outputs differ between runs");
  }
  return {true, "4 eval runs (parallelism 1,1,8,8) byte-identical, " + std::to_string(outputs[0].size()) +
                    " bytes"};
}

// 10 ------------------------------------------------------------------------

Outcome live_smoke() {
  using testkit::StubServer;
  StubServer chat, reward, forgery, search;
  chat.post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
    std::string reply = R"({"verdict": "original", "reasoning": "Consistent with the evidence."})";
    if (req.body.find("Output ONLY the score") != std::string::npos) reply = "0.8";
    if (req.body.find("[BON level-n]") != std::string::npos) reply = "[BON level-1]";
    nlohmann::json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}},
                        {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}}}};
    res.set_content(body.dump(), "application/json");
  });
  reward.post("/score", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"score": 1.5})", "application/json");
  });
  forgery.post("/detect", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"score": 0.1})", "application/json");
  });
  search.get("/w/api.php", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"query":{"search":[{"title":"Bridge","snippet":"Opened in 2020."}]}})",
                    "application/json");
  });
  for (auto* s : {&chat, &reward, &forgery, &search}) s->start();

  testkit::TempDir dir;
  const auto trace_path = (dir / "trace.json").string();
  std::ostringstream out, err;
  const int code = cli::run_cli(
      {"run", "--text", "Officials opened the new bridge on Monday.", "--image", "https://img.test/bridge.jpg",
       "--backend-url", chat.url(), "--reward-url", reward.url(), "--forgery-url", forgery.url(),
       "--search-url", search.url() + "/w/api.php", "--trace", trace_path, "--n", "3"},
      out, err, [](const char*) { return std::optional<std::string>(); });
  if (code != cli::kExitOk) return fail("run exited " + std::to_string(code) + ": " + err.str());
  const auto doc = nlohmann::json::parse(testkit::read_file(trace_path), nullptr, false);
  if (doc.is_discarded()) return fail("trace is not JSON");
  const auto problems = validate_trace_json(doc);
  if (!problems.empty()) return fail("schema: " + problems.front());
  return {true, "label " + doc["final_label"]["name"].get<std::string>() + ", " + std::to_string(chat.hits()) +
                    " chat requests, schema-valid trace"};
}

struct Criterion {
  int id;
  const char* name;
  bool gating;
  std::function<Outcome()> check;
};

}  // namespace
}  // namespace m3d

int main() {
  using namespace m3d;
  const std::vector<Criterion> criteria{
      {1, "cascade conformance", true, cascade_conformance},
      {2, "stopping-rule oracle", true, stopping_oracle},
      {3, "selection oracle", true, selection_oracle},
      {4, "tau monotonicity", true, tau_monotonicity},
      {5, "ablation direction", true, ablation_direction},
      {6, "fusion and normalization", true, fusion_and_normalization},
      {7, "metrics oracle", true, metrics_oracle},
      {8, "activation-ratio reporting", true, activation_ratio},
      {9, "determinism", true, determinism},
      {10, "live smoke (non-gating)", false, live_smoke},
  };
  bool ok = true;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    std::printf("[%s] criterion %d: %s - %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    if (c.gating && !o.pass) ok = false;
  }
  return ok ? 0 : 1;
}
