// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "m3d/types.hpp"

namespace m3d {

/// How early stopping interacts with generation.
///  - Faithful: generate and score all N, then rank and cut at m*.
///  - Incremental: grow the candidate set one at a time (after an initial
///    pair) and stop generating as soon as the Top-m gap exceeds tau.
enum class BonMode : int { Faithful = 0, Incremental = 1 };
enum class SelectionKind : int { Argmax = 0, Boltzmann = 1 };

std::string_view bon_mode_name(BonMode mode) noexcept;
std::optional<BonMode> parse_bon_mode(std::string_view name);
std::string_view selection_name(SelectionKind kind) noexcept;
std::optional<SelectionKind> parse_selection(std::string_view name);

struct BonConfig {
  int n_candidates = 5;
  double tau = 0.5;
  BonMode mode = BonMode::Incremental;
  SelectionKind selection = SelectionKind::Argmax;
  double beta = 1.0;  // Boltzmann inverse temperature
  int concurrency_limit = 4;
  double temperature = 0.7;

  /// Throws ContractViolation on n < 1, concurrency < 1, negative
  /// temperature, NaN tau, or non-positive beta with Boltzmann selection.
  void validate() const;
};

/// Critique participates in the fused score for Text and Image only.
struct StageScoringPlan {
  Stage stage = Stage::Text;
  bool use_critique = true;

  static StageScoringPlan for_stage(Stage stage) noexcept {
    return {stage, stage != Stage::Cross};
  }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Scoring primitives
// ---------------------------------------------------------------------------

/// Min-max over the batch; a constant batch maps to 0.5 everywhere.
std::vector<double> normalize_rewards(std::span<const double> raw);

/// reward_norm + critique, or reward_norm alone when critique is absent.
double fuse_score(double reward_norm, std::optional<double> critique);

/// s(1) - mean(s(2..m)) over a descending-sorted list; 2 <= m <= size.
double top_m_average_gap(std::span<const double> scores_desc, int m);

/// Smallest m in [2, N] whose Top-m gap exceeds tau, else N. Fewer than two
/// scores returns 1: nothing to rank.
int stopping_index(std::span<const double> scores, double tau);

/// Position of the maximum fused score; ties go to the earlier candidate.
/// Throws ContractViolation on an empty list or a candidate without a fused score.
std::size_t select_argmax(std::span<const Candidate> candidates);

/// softmax(beta * fused) with max subtraction.
std::vector<double> boltzmann_weights(std::span<const double> fused, double beta);

/// Samples a position with probability proportional to exp(beta * fused).
std::size_t select_boltzmann(std::span<const Candidate> candidates, double beta,
                             std::mt19937_64& rng);

/// Uniform double in [0,1) built from 53 generator bits (portable across
/// standard libraries, unlike uniform_real_distribution).
double canonical_uniform(std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Stage engine
// ---------------------------------------------------------------------------

struct ScoredCritique {
  double score = 0.5;
  std::optional<std::string> warning;
};

/// Produces and scores candidates for one stage. Implementations must be
/// safe to call concurrently for distinct indices.
class CandidateWorker {
 public:
  virtual ~CandidateWorker() = default;
  /// Throws on failure (parse or backend); the candidate is then dropped.
  virtual Verdict generate(int index) = 0;
  virtual double reward(const Verdict& verdict, int index) = 0;
  virtual ScoredCritique critique(const Verdict& verdict, int index) = 0;
};

class StageFailure : public std::runtime_error {
 public:
  StageFailure(const std::string& what, std::vector<std::string> warnings, int generated)
      : std::runtime_error(what), warnings(std::move(warnings)), generated(generated) {}
  std::vector<std::string> warnings;
  int generated = 0;
};

struct BonOutcome {
  StageTrace trace;          // mode=BoN, candidates in generation order
  Candidate selected;
  int generated = 0;         // generation attempts, including dropped candidates
  std::vector<std::string> warnings;
};

/// Runs Best-of-N for one activated stage. `rng` is required for Boltzmann
/// selection and ignored otherwise. Throws StageFailure if no candidate
/// survives generation and scoring.
BonOutcome run_bon_stage(const StageScoringPlan& plan, const BonConfig& cfg,
                         CandidateWorker& worker, std::mt19937_64* rng = nullptr);

}  // namespace m3d
