#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pop/aggregate.hpp"
#include "pop/sampling.hpp"
#include "pop/scoring.hpp"

namespace pop {

// ============================================================================
// Stage kernels for backend panels
// ============================================================================
//
// The judge fan-out is the hot loop: every judge scores every candidate of
// every query. Tasks are written into pre-sized slots in canonical order
// (query, candidate, judge), so the OpenMP path is byte-identical to the
// serial reference for any thread count.

struct JudgeStageOptions {
  bool include_self_eval = true;
  ScoringMode scoring_mode = ScoringMode::absolute;
  RelativeOutput relative_output = RelativeOutput::ranking;
  size_t context_budget_chars = 32768;
  double temperature = 0.0;
  int max_tokens = 512;
  uint64_t seed = 0;
};

struct JudgeStageResult {
  std::vector<ScoreRecord> scores;       // absolute mode
  std::vector<RelativeVerdict> verdicts; // relative mode, one per (judge, query)
  size_t dropped_votes = 0;              // JudgeFailed occurrences
};

JudgeStageResult judge_all_serial(std::span<const PeerHandle> judges,
                                  std::span<const Query> queries,
                                  std::span<const Candidate> candidates,
                                  const JudgeStageOptions& options);

JudgeStageResult judge_all_parallel(std::span<const PeerHandle> judges,
                                    std::span<const Query> queries,
                                    std::span<const Candidate> candidates,
                                    const JudgeStageOptions& options, int threads = 0);

// Dispatches on threads: 1 selects the serial reference.
JudgeStageResult judge_all(std::span<const PeerHandle> judges, std::span<const Query> queries,
                           std::span<const Candidate> candidates,
                           const JudgeStageOptions& options, int threads);

// ============================================================================
// Aggregation and pool assembly over whole stages
// ============================================================================

// Groups votes per candidate (in candidate order), applies self-vote exclusion
// when configured, and aggregates. Candidates whose votes were all dropped get
// no aggregate. Returns the surviving-vote candidate set through `voted`.
std::vector<AggregatedReward> aggregate_stage(std::span<const ScoreRecord> scores,
                                              std::span<const Candidate> candidates,
                                              const AggregatorConfig& config,
                                              std::set<std::string>* voted = nullptr);

// Relative mode: verdicts grouped per query are reduced with average_rank and
// mapped onto [0,1] rewards (score-bearing verdicts are averaged directly).
std::vector<AggregatedReward> aggregate_relative_stage(std::span<const RelativeVerdict> verdicts,
                                                       std::span<const Candidate> candidates,
                                                       std::set<std::string>* voted = nullptr);

// One pool per query, in query order.
std::vector<CandidatePool> pool_stage(std::span<const Query> queries,
                                      std::span<const Candidate> candidates,
                                      std::span<const AggregatedReward> rewards, PanelMode mode,
                                      const std::map<PeerId, int>& member_order,
                                      const std::set<std::string>* voted = nullptr);

}  // namespace pop
