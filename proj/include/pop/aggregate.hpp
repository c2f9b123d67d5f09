#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pop/scoring.hpp"

namespace pop {

// ============================================================================
// Reward ensembling
// ============================================================================

enum class AggregationStrategy { mean, min, uw };

const char* to_string(AggregationStrategy s);
AggregationStrategy aggregation_from_string(std::string_view name);

struct AggregatorConfig {
  AggregationStrategy strategy = AggregationStrategy::mean;
  double lambda = 1.0;  // UW variance penalty weight; engine default, tune per deployment
  bool exclude_self_eval = false;
};

struct AggregatedReward {
  std::string candidate_id;
  std::string query_id;
  double value = 0.0;
  AggregationStrategy strategy = AggregationStrategy::mean;
  int n_votes = 0;
  double vote_std = 0.0;  // population standard deviation of the vote rewards
};

// All aggregators throw NoVotes on an empty vote list.
AggregatedReward aggregate_mean(std::span<const ScoreRecord> votes);
AggregatedReward aggregate_min(std::span<const ScoreRecord> votes);
// clamp(mean - lambda * population_std, 0, 1); single votes have zero std
AggregatedReward aggregate_uw(std::span<const ScoreRecord> votes, double lambda);

AggregatedReward aggregate(std::span<const ScoreRecord> votes, const AggregatorConfig& config);

// Removes votes where the judge scored its own peer's candidate.
std::vector<ScoreRecord> filter_self_votes(std::span<const ScoreRecord> votes,
                                           const std::map<std::string, PeerId>& candidate_owner);

// ============================================================================
// Relative-mode aggregation
// ============================================================================

enum class RelativeAggregation { average_rank, majority_top };

// average_rank: score = mean rank position (lower is better), sorted ascending.
// majority_top: sorted by first-place vote count, ties broken by average rank,
// then lexicographic candidate id; score = first-place count.
// Score-bearing verdicts are converted to rankings by descending score first.
// Throws InconsistentCandidateSets when verdicts disagree on the candidate set.
std::vector<std::pair<std::string, double>> aggregate_relative(
    std::span<const RelativeVerdict> verdicts, RelativeAggregation method);

// Maps a mean rank over k candidates onto [0,1] (rank 1 -> 1.0, rank k -> 0.0).
double rank_to_reward(double mean_rank, size_t k);

}  // namespace pop
