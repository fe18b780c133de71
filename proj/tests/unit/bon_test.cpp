// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "m3d/bon.hpp"
#include "m3d/errors.hpp"
#include "oracles.hpp"
#include "scripted_worker.hpp"

namespace m3d {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Candidate with_fused(double f) {
  Candidate c;
  c.fused = f;
  return c;
}

std::vector<Candidate> candidates_of(const std::vector<double>& fused) {
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    out.push_back(with_fused(fused[i]));
    out.back().index = static_cast<int>(i);
  }
  return out;
}

TEST(NormalizeRewards, Examples) {
  EXPECT_EQ(normalize_rewards(std::vector<double>{2.0, 1.0, 0.0}), (std::vector<double>{1.0, 0.5, 0.0}));
  EXPECT_EQ(normalize_rewards(std::vector<double>{3.0, 3.0, 3.0}), (std::vector<double>{0.5, 0.5, 0.5}));
  const auto n = normalize_rewards(std::vector<double>{-1.2, 0.4, 3.0, 0.4});
  const double mid = (0.4 - (-1.2)) / (3.0 - (-1.2));
  EXPECT_EQ(n[0], 0.0);
  EXPECT_NEAR(n[1], 0.38095238095238, 1e-12);
  EXPECT_EQ(n[1], mid);
  EXPECT_EQ(n[2], 1.0);
  EXPECT_EQ(n[3], n[1]);
  EXPECT_EQ(normalize_rewards(std::vector<double>{-7.0}), (std::vector<double>{0.5}));
  EXPECT_THROW(normalize_rewards(std::vector<double>{}), ContractViolation);
}

TEST(NormalizeRewards, RangeAndOrderProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-50.0, 50.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> raw(1 + rng() % 9);
    for (auto& r : raw) r = d(rng);
    const auto n = normalize_rewards(raw);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      EXPECT_GE(n[i], 0.0);
      EXPECT_LE(n[i], 1.0);
      for (std::size_t j = 0; j < raw.size(); ++j) {
        if (raw[i] < raw[j]) EXPECT_LE(n[i], n[j]);
      }
    }
  }
}

TEST(FuseScore, Examples) {
  EXPECT_DOUBLE_EQ(fuse_score(0.8, 0.6), 1.4);
  EXPECT_EQ(fuse_score(0.7, std::nullopt), 0.7);
  EXPECT_EQ(fuse_score(0.0, 0.0), 0.0);
  EXPECT_THROW(fuse_score(1.1, 0.2), ContractViolation);
  EXPECT_THROW(fuse_score(0.5, -0.1), ContractViolation);
}

TEST(TopMAverageGap, Examples) {
  const std::vector<double> s{0.9, 0.5, 0.4, 0.3, 0.2};
  EXPECT_NEAR(top_m_average_gap(s, 2), 0.4, 1e-12);
  EXPECT_NEAR(top_m_average_gap(s, 3), 0.45, 1e-12);
  const std::vector<double> c{0.3, 0.3, 0.3, 0.3};
  for (int m = 2; m <= 4; ++m) EXPECT_EQ(top_m_average_gap(c, m), 0.0);
  EXPECT_THROW(top_m_average_gap(s, 1), ContractViolation);
  EXPECT_THROW(top_m_average_gap(s, 6), ContractViolation);
}

TEST(StoppingIndex, Examples) {
  const std::vector<double> s{0.9, 0.5, 0.4, 0.3, 0.2};
  EXPECT_EQ(stopping_index(s, 0.3), 2);
  EXPECT_EQ(stopping_index(s, 0.5), 5);
  EXPECT_EQ(stopping_index(s, kInf), 5);
  EXPECT_EQ(stopping_index(s, -0.5), 2);
  const std::vector<double> shuffled{0.3, 0.9, 0.2, 0.5, 0.4};
  EXPECT_EQ(stopping_index(shuffled, 0.5), 5);
  EXPECT_EQ(stopping_index(std::vector<double>{0.4}, 0.1), 1);
  EXPECT_EQ(stopping_index(std::vector<double>{}, 0.1), 1);
}

TEST(StoppingIndex, MatchesBruteForce) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> d(0.0, 2.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> s(2 + rng() % 7);
    for (auto& x : s) x = d(rng);
    for (double tau : {-0.5, 0.0, 0.1, 0.3, 0.5, 0.7, 10.0}) {
      ASSERT_EQ(stopping_index(s, tau), oracle::stopping_index(s, tau));
    }
  }
}

TEST(StoppingIndex, MonotoneInTau) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0.0, 2.0);
  const std::vector<double> taus{-1.0, 0.0, 0.1, 0.3, 0.5, 0.7, 1.0, kInf};
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> s(2 + rng() % 7);
    for (auto& x : s) x = d(rng);
    int prev = 0;
    for (double tau : taus) {
      const int m = stopping_index(s, tau);
      EXPECT_GE(m, prev);
      prev = m;
    }
  }
}

TEST(SelectArgmax, Examples) {
  EXPECT_EQ(select_argmax(candidates_of({1.2, 1.5, 1.5})), 1u);
  EXPECT_EQ(select_argmax(candidates_of({0.3})), 0u);
  EXPECT_EQ(select_argmax(candidates_of({0.0, 2.0, 1.9})), 1u);
  EXPECT_THROW(select_argmax(std::vector<Candidate>{}), ContractViolation);
  std::vector<Candidate> unscored(1);
  EXPECT_THROW(select_argmax(unscored), ContractViolation);
}

TEST(Boltzmann, Weights) {
  const auto w = boltzmann_weights(std::vector<double>{1.0, 0.0}, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(w[0], e / (e + 1.0), 1e-12);
  EXPECT_NEAR(w[1], 1.0 / (e + 1.0), 1e-12);
  EXPECT_NEAR(w[0], 0.7311, 5e-5);

  const auto flat = boltzmann_weights(std::vector<double>{3.0, -1.0, 0.5, 2.0}, 1e-12);
  for (double x : flat) EXPECT_NEAR(x, 0.25, 1e-9);

  const auto sharp = boltzmann_weights(std::vector<double>{0.2, 0.9, 0.5}, 1e6);
  EXPECT_GE(sharp[1], 1.0 - 1e-6);
  EXPECT_THROW(boltzmann_weights(std::vector<double>{1.0}, 0.0), ContractViolation);
}

TEST(Boltzmann, SumToOneAndPermutationEquivariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> s(1 + rng() % 8);
    for (auto& x : s) x = d(rng);
    const double beta = 0.1 + static_cast<double>(rng() % 100) / 10.0;
    const auto w = boltzmann_weights(s, beta);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    std::vector<std::size_t> perm(s.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) ps[i] = s[perm[i]];
    const auto pw = boltzmann_weights(ps, beta);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(pw[i], w[perm[i]], 1e-12);
  }
}

TEST(Boltzmann, SamplingFrequenciesAndDeterminism) {
  const auto cands = candidates_of({1.0, 0.0});
  std::mt19937_64 rng(99);
  int first = 0;
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) first += select_boltzmann(cands, 1.0, rng) == 0 ? 1 : 0;
  const double e = std::exp(1.0);
  EXPECT_NEAR(static_cast<double>(first) / trials, e / (e + 1.0), 0.015);

  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_boltzmann(cands, 1.0, a), select_boltzmann(cands, 1.0, b));
  std::mt19937_64 u(123);
  for (int i = 0; i < 1000; ++i) {
    const double x = canonical_uniform(u);
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(BonConfig, Validation) {
  BonConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_candidates = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = {};
  c.tau = std::nan("");
  EXPECT_THROW(c.validate(), ContractViolation);
  c = {};
  c.selection = SelectionKind::Boltzmann;
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = {};
  c.concurrency_limit = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
  EXPECT_THROW((StageScoringPlan{Stage::Cross, true}.validate()), ContractViolation);
  EXPECT_FALSE(StageScoringPlan::for_stage(Stage::Cross).use_critique);
  EXPECT_TRUE(StageScoringPlan::for_stage(Stage::Image).use_critique);
}

/// Worker scripted by per-index rewards and critiques.
using testkit::ScriptedWorker;

BonConfig config(BonMode mode, int n, double tau) {
  BonConfig c;
  c.mode = mode;
  c.n_candidates = n;
  c.tau = tau;
  return c;
}

TEST(RunBonStage, IncrementalStopsAfterConfidentPair) {
  ScriptedWorker w(Stage::Text, {1.0, 1.0, 1.0, 1.0, 1.0}, {0.9, 0.2, 0.5, 0.5, 0.5});
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Incremental, 5, 0.3), w);
  EXPECT_EQ(out.generated, 2);
  EXPECT_EQ(w.generated.load(), 2);
  EXPECT_EQ(out.trace.candidates.size(), 2u);
  EXPECT_EQ(out.trace.stopping_prefix, 2);
  EXPECT_EQ(out.trace.selected_index, 0);
  EXPECT_NEAR(*out.trace.candidates[0].fused - *out.trace.candidates[1].fused, 0.7, 1e-12);
}

TEST(RunBonStage, IncrementalExhaustsBudgetWhenNeverConfident) {
  ScriptedWorker w(Stage::Text, {1.0, 1.0, 1.0, 1.0, 1.0}, {0.5, 0.5, 0.5, 0.5, 0.5});
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Incremental, 5, 0.3), w);
  EXPECT_EQ(out.generated, 5);
  EXPECT_EQ(out.trace.stopping_prefix, 5);
  EXPECT_EQ(out.trace.selected_index, 0);
}

TEST(RunBonStage, FaithfulExample) {
  ScriptedWorker w(Stage::Text, {1.0, 1.0, 1.0, 1.0, 1.0}, {0.2, 0.9, 0.5, 0.4, 0.3});
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Faithful, 5, 0.3), w);
  EXPECT_EQ(out.trace.selected_index, 1);
  EXPECT_EQ(out.trace.stopping_prefix, 2);
  EXPECT_EQ(out.generated, 5);
  EXPECT_EQ(w.rewards.load(), 5);
  EXPECT_EQ(w.critiques.load(), 5);
}

TEST(RunBonStage, FaithfulExampleOverAllOrderings) {
  std::vector<double> q{0.2, 0.9, 0.5, 0.4, 0.3};
  std::sort(q.begin(), q.end());
  do {
    ScriptedWorker w(Stage::Text, {1.0, 1.0, 1.0, 1.0, 1.0}, q);
    auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Faithful, 5, 0.3), w);
    const auto best = static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
    ASSERT_EQ(out.trace.selected_index, best);
    ASSERT_EQ(out.trace.stopping_prefix, 2);
  } while (std::next_permutation(q.begin(), q.end()));
}

TEST(RunBonStage, CrossStageSkipsCritique) {
  ScriptedWorker w(Stage::Cross, {0.3, 2.0, -1.0});
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Cross), config(BonMode::Faithful, 3, 0.3), w);
  EXPECT_EQ(w.critiques.load(), 0);
  for (const auto& c : out.trace.candidates) {
    EXPECT_FALSE(c.critique);
    EXPECT_EQ(c.fused, c.reward_norm);
  }
  EXPECT_EQ(out.trace.selected_index, 1);
}

TEST(RunBonStage, FusedIsNormPlusCritique) {
  ScriptedWorker w(Stage::Image, {0.0, 4.0, 2.0}, {0.1, 0.2, 0.9});
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Image), config(BonMode::Faithful, 3, kInf), w);
  const auto& c = out.trace.candidates;
  EXPECT_EQ(*c[0].reward_norm, 0.0);
  EXPECT_EQ(*c[1].reward_norm, 1.0);
  EXPECT_EQ(*c[2].reward_norm, 0.5);
  for (const auto& x : c) EXPECT_EQ(*x.fused, *x.reward_norm + *x.critique);
  EXPECT_EQ(out.trace.selected_index, 2);  // 0.5 + 0.9 beats 1.0 + 0.2
  EXPECT_EQ(out.trace.stopping_prefix, 3);
}

TEST(RunBonStage, SingleCandidateBudget) {
  ScriptedWorker w(Stage::Text, {3.0});
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Incremental, 1, 0.3), w);
  EXPECT_EQ(out.generated, 1);
  EXPECT_EQ(out.trace.selected_index, 0);
  EXPECT_EQ(out.trace.stopping_prefix, 1);
  EXPECT_EQ(*out.trace.candidates[0].reward_norm, 0.5);
}

TEST(RunBonStage, DroppedCandidatesAreReportedAndSkipped) {
  ScriptedWorker w(Stage::Text, {1.0, 5.0, 0.0}, {0.5, 0.5, 0.5});
  w.fail_generate = {1};
  auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Faithful, 3, kInf), w);
  ASSERT_EQ(out.trace.candidates.size(), 2u);
  EXPECT_EQ(out.trace.candidates[0].index, 0);
  EXPECT_EQ(out.trace.candidates[1].index, 2);
  EXPECT_EQ(out.warnings.size(), 1u);
  EXPECT_EQ(out.generated, 3);
  EXPECT_EQ(out.trace.selected_index, 0);
}

TEST(RunBonStage, AllCandidatesFailing) {
  ScriptedWorker w(Stage::Text, {1.0, 1.0});
  w.fail_generate = {0, 1};
  try {
    run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Faithful, 2, 0.3), w);
    FAIL() << "expected StageFailure";
  } catch (const StageFailure& e) {
    EXPECT_EQ(e.warnings.size(), 2u);
    EXPECT_EQ(e.generated, 2);
  }
}

TEST(RunBonStage, BoltzmannNeedsGeneratorAndStaysInPrefix) {
  ScriptedWorker w(Stage::Text, {1.0, 1.0, 1.0, 1.0, 1.0}, {0.2, 0.9, 0.5, 0.4, 0.3});
  auto cfg = config(BonMode::Faithful, 5, 0.3);
  cfg.selection = SelectionKind::Boltzmann;
  EXPECT_THROW(run_bon_stage(StageScoringPlan::for_stage(Stage::Text), cfg, w), ContractViolation);
  cfg.tau = 0.42;  // m* = 3: {0.9, 0.5, 0.4}
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    ScriptedWorker w2(Stage::Text, {1.0, 1.0, 1.0, 1.0, 1.0}, {0.2, 0.9, 0.5, 0.4, 0.3});
    auto out = run_bon_stage(StageScoringPlan::for_stage(Stage::Text), cfg, w2, &rng);
    ASSERT_EQ(out.trace.stopping_prefix, 3);
    const int pick = *out.trace.selected_index;
    EXPECT_TRUE(pick == 1 || pick == 2 || pick == 3) << pick;
  }
}

TEST(RunBonStage, ConcurrencyDoesNotChangeTheTrace) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> r(6), q(6);
    for (auto& x : r) x = d(rng);
    for (auto& x : q) x = std::abs(d(rng)) / 2.0;
    for (BonMode mode : {BonMode::Faithful, BonMode::Incremental}) {
      auto cfg = config(mode, 6, 0.3);
      cfg.concurrency_limit = 1;
      ScriptedWorker a(Stage::Image, r, q);
      const auto serial = run_bon_stage(StageScoringPlan::for_stage(Stage::Image), cfg, a);
      cfg.concurrency_limit = 6;
      ScriptedWorker b(Stage::Image, r, q);
      const auto parallel = run_bon_stage(StageScoringPlan::for_stage(Stage::Image), cfg, b);
      EXPECT_EQ(serial.trace, parallel.trace);
    }
  }
}

TEST(RunBonStage, IncrementalGenerationIsMonotoneInTau) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> r(5), q(5);
    for (auto& x : r) x = d(rng);
    for (auto& x : q) x = std::abs(d(rng)) / 2.0;
    int prev = 0;
    for (double tau : {0.1, 0.3, 0.5, 0.7, kInf}) {
      ScriptedWorker w(Stage::Text, r, q);
      const auto out =
          run_bon_stage(StageScoringPlan::for_stage(Stage::Text), config(BonMode::Incremental, 5, tau), w);
      EXPECT_GE(out.generated, prev);
      prev = out.generated;
    }
    EXPECT_EQ(prev, 5);
  }
}

}  // namespace
}  // namespace m3d
