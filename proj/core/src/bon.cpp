// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3d/bon.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "m3d/errors.hpp"

namespace m3d {
namespace {

/// Runs fn(i) for i in [0, count) on up to `limit` threads. fn must not throw.
template <typename Fn>
void parallel_for(int count, int limit, Fn&& fn) {
  const int workers = std::min(count, std::max(1, limit));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
}

/// One generation slot: either a scored candidate or the reason it was dropped.
struct Slot {
  std::optional<Verdict> verdict;
  double reward_raw = 0.0;
  std::optional<double> critique;
  std::vector<std::string> warnings;
};

Slot produce(const StageScoringPlan& plan, CandidateWorker& worker, int index) {
  Slot slot;
  const std::string tag =
      std::string(stage_name(plan.stage)) + " candidate " + std::to_string(index);
  Verdict verdict;
  try {
    verdict = worker.generate(index);
  } catch (const std::exception& e) {
    slot.warnings.push_back(tag + " dropped: " + e.what());
    return slot;
  }
  try {
    slot.reward_raw = worker.reward(verdict, index);
  } catch (const std::exception& e) {
    slot.warnings.push_back(tag + " dropped (reward): " + e.what());
    return slot;
  }
  if (!std::isfinite(slot.reward_raw)) {
    slot.warnings.push_back(tag + " dropped: non-finite reward");
    return slot;
  }
  if (plan.use_critique) {
    auto crit = worker.critique(verdict, index);
    slot.critique = std::clamp(crit.score, 0.0, 1.0);
    if (crit.warning) slot.warnings.push_back(*crit.warning);
  }
  slot.verdict = std::move(verdict);
  return slot;
}

/// Builds candidates (generation order) from surviving slots, normalizing
/// rewards over exactly this set.
std::vector<Candidate> assemble(const std::vector<Slot>& slots) {
  struct Live {
    int index;
    const Slot* slot;
  };
  std::vector<Live> live;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].verdict) live.push_back({static_cast<int>(i), &slots[i]});
  }
  std::vector<double> raw;
  raw.reserve(live.size());
  for (const auto& l : live) raw.push_back(l.slot->reward_raw);
  std::vector<Candidate> out;
  if (live.empty()) return out;
  const auto norm = normalize_rewards(raw);
  for (std::size_t k = 0; k < live.size(); ++k) {
    Candidate c;
    c.index = live[k].index;
    c.verdict = *live[k].slot->verdict;
    c.reward_raw = live[k].slot->reward_raw;
    c.reward_norm = norm[k];
    c.critique = live[k].slot->critique;
    c.fused = fuse_score(norm[k], c.critique);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<double> fused_of(const std::vector<Candidate>& cands) {
  std::vector<double> f;
  f.reserve(cands.size());
  for (const auto& c : cands) f.push_back(*c.fused);
  return f;
}

/// Positions ordered by fused score descending, earlier generation first on ties.
std::vector<std::size_t> ranking(const std::vector<Candidate>& cands) {
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return *cands[a].fused > *cands[b].fused; });
  return order;
}

/// Smallest m in [2, size] with gap > tau over the sorted list, if any.
std::optional<int> first_confident_prefix(std::vector<double> fused, double tau) {
  if (fused.size() < 2) return std::nullopt;
  std::sort(fused.begin(), fused.end(), std::greater<>());
  for (int m = 2; m <= static_cast<int>(fused.size()); ++m) {
    if (top_m_average_gap(fused, m) > tau) return m;
  }
  return std::nullopt;
}

std::size_t choose(const std::vector<Candidate>& pool, const BonConfig& cfg, std::mt19937_64* rng) {
  if (cfg.selection == SelectionKind::Boltzmann) {
    if (!rng) throw ContractViolation("Boltzmann selection requires a seeded generator");
    return select_boltzmann(pool, cfg.beta, *rng);
  }
  return select_argmax(pool);
}

}  // namespace

std::string_view bon_mode_name(BonMode mode) noexcept {
  return mode == BonMode::Faithful ? "faithful" : "incremental";
}

std::optional<BonMode> parse_bon_mode(std::string_view name) {
  if (name == "faithful") return BonMode::Faithful;
  if (name == "incremental") return BonMode::Incremental;
  return std::nullopt;
}

std::string_view selection_name(SelectionKind kind) noexcept {
  return kind == SelectionKind::Argmax ? "argmax" : "boltzmann";
}

std::optional<SelectionKind> parse_selection(std::string_view name) {
  if (name == "argmax") return SelectionKind::Argmax;
  if (name == "boltzmann") return SelectionKind::Boltzmann;
  return std::nullopt;
}

void BonConfig::validate() const {
  if (n_candidates < 1) throw ContractViolation("n_candidates must be >= 1");
  if (concurrency_limit < 1) throw ContractViolation("concurrency_limit must be >= 1");
  if (!(temperature >= 0.0)) throw ContractViolation("temperature must be >= 0");
  if (std::isnan(tau)) throw ContractViolation("tau must not be NaN");
  if (selection == SelectionKind::Boltzmann && !(beta > 0.0)) {
    throw ContractViolation("Boltzmann selection requires beta > 0");
  }
}

void StageScoringPlan::validate() const {
  if (use_critique && stage == Stage::Cross) {
    throw ContractViolation("the cross stage is scored by reward only");
  }
}

std::vector<double> normalize_rewards(std::span<const double> raw) {
  if (raw.empty()) throw ContractViolation("normalize_rewards: empty batch");
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> out(raw.size(), 0.5);
  if (hi == lo) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::clamp((raw[i] - lo) / span, 0.0, 1.0);
  }
  return out;
}

double fuse_score(double reward_norm, std::optional<double> critique) {
  if (!(reward_norm >= 0.0 && reward_norm <= 1.0)) {
    throw ContractViolation("fuse_score: reward_norm outside [0,1]");
  }
  if (!critique) return reward_norm;
  if (!(*critique >= 0.0 && *critique <= 1.0)) {
    throw ContractViolation("fuse_score: critique outside [0,1]");
  }
  return reward_norm + *critique;
}

double top_m_average_gap(std::span<const double> scores_desc, int m) {
  if (m < 2 || m > static_cast<int>(scores_desc.size())) {
    throw ContractViolation("top_m_average_gap: m must be in [2, size]");
  }
  double rest = 0.0;
  for (int j = 1; j < m; ++j) rest += scores_desc[static_cast<std::size_t>(j)];
  return scores_desc[0] - rest / static_cast<double>(m - 1);
}

int stopping_index(std::span<const double> scores, double tau) {
  if (scores.size() < 2) return 1;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // Running sum keeps the scan linear.
  double rest = 0.0;
  for (std::size_t m = 2; m <= sorted.size(); ++m) {
    rest += sorted[m - 1];
    if (sorted[0] - rest / static_cast<double>(m - 1) > tau) return static_cast<int>(m);
  }
  return static_cast<int>(sorted.size());
}

std::size_t select_argmax(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw ContractViolation("select_argmax: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!candidates[i].fused) throw ContractViolation("select_argmax: unscored candidate");
    if (*candidates[i].fused > *candidates[best].fused) best = i;
  }
  return best;
}

std::vector<double> boltzmann_weights(std::span<const double> fused, double beta) {
  if (fused.empty()) throw ContractViolation("boltzmann_weights: no scores");
  if (!(beta > 0.0)) throw ContractViolation("boltzmann_weights: beta must be > 0");
  const double top = *std::max_element(fused.begin(), fused.end());
  std::vector<double> w(fused.size());
  double total = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    w[i] = std::exp(beta * (fused[i] - top));
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

double canonical_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t select_boltzmann(std::span<const Candidate> candidates, double beta,
                             std::mt19937_64& rng) {
  if (candidates.empty()) throw ContractViolation("select_boltzmann: no candidates");
  std::vector<double> fused;
  fused.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (!c.fused) throw ContractViolation("select_boltzmann: unscored candidate");
    fused.push_back(*c.fused);
  }
  const auto w = boltzmann_weights(fused, beta);
  const double u = canonical_uniform(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return i;
  }
  // Rounding left u above the accumulated mass: take the last positive weight.
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return i;
  }
  return w.size() - 1;
}

BonOutcome run_bon_stage(const StageScoringPlan& plan, const BonConfig& cfg,
                         CandidateWorker& worker, std::mt19937_64* rng) {
  cfg.validate();
  plan.validate();
  const int n = cfg.n_candidates;

  BonOutcome out;
  out.trace.stage = plan.stage;
  out.trace.activated = true;
  out.trace.mode = StageMode::BoN;

  std::vector<Slot> slots;
  std::vector<Candidate> candidates;

  if (cfg.mode == BonMode::Faithful) {
    slots.resize(static_cast<std::size_t>(n));
    parallel_for(n, cfg.concurrency_limit,
                 [&](int i) { slots[static_cast<std::size_t>(i)] = produce(plan, worker, i); });
    out.generated = n;
    candidates = assemble(slots);
    out.trace.stopping_prefix = stopping_index(fused_of(candidates), cfg.tau);
  } else {
    const int first = std::min(2, n);
    slots.resize(static_cast<std::size_t>(first));
    parallel_for(first, cfg.concurrency_limit,
                 [&](int i) { slots[static_cast<std::size_t>(i)] = produce(plan, worker, i); });
    int generated = first;
    for (;;) {
      candidates = assemble(slots);
      if (auto m = first_confident_prefix(fused_of(candidates), cfg.tau)) {
        out.trace.stopping_prefix = *m;
        break;
      }
      if (generated >= n) {
        out.trace.stopping_prefix = std::max<int>(1, static_cast<int>(candidates.size()));
        break;
      }
      slots.push_back(produce(plan, worker, generated));
      ++generated;
    }
    out.generated = generated;
  }

  for (auto& s : slots) {
    for (auto& w : s.warnings) out.warnings.push_back(std::move(w));
  }
  if (candidates.empty()) {
    throw StageFailure(std::string(stage_name(plan.stage)) + " stage: every candidate failed",
                       std::move(out.warnings), out.generated);
  }

  std::size_t pick = 0;
  if (cfg.mode == BonMode::Faithful) {
    // Restrict selection to the top-m* ranked candidates.
    const auto order = ranking(candidates);
    const auto cut = static_cast<std::size_t>(
        std::clamp<int>(*out.trace.stopping_prefix, 1, static_cast<int>(order.size())));
    std::vector<Candidate> prefix;
    for (std::size_t k = 0; k < cut; ++k) prefix.push_back(candidates[order[k]]);
    pick = order[choose(prefix, cfg, rng)];
  } else {
    pick = choose(candidates, cfg, rng);
  }

  out.trace.selected_index = static_cast<int>(pick);
  out.trace.verdict = candidates[pick].verdict;
  out.selected = candidates[pick];
  out.trace.candidates = std::move(candidates);
  return out;
}

}  // namespace m3d
