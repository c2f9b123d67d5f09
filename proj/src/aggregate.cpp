#include "pop/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pop {

const char* to_string(AggregationStrategy s) {
  switch (s) {
    case AggregationStrategy::mean: return "mean";
    case AggregationStrategy::min: return "min";
    case AggregationStrategy::uw: return "uw";
  }
  return "mean";
}

AggregationStrategy aggregation_from_string(std::string_view name) {
  if (name == "mean") return AggregationStrategy::mean;
  if (name == "min") return AggregationStrategy::min;
  if (name == "uw") return AggregationStrategy::uw;
  fail(ErrorKind::ConfigError, "unknown aggregation strategy '" + std::string(name) + "'");
}

namespace {

AggregatedReward base_aggregate(std::span<const ScoreRecord> votes, AggregationStrategy strategy) {
  if (votes.empty()) fail(ErrorKind::NoVotes, "aggregation over an empty vote list");
  AggregatedReward out;
  out.candidate_id = votes.front().candidate_id;
  out.query_id = votes.front().query_id;
  out.strategy = strategy;
  out.n_votes = static_cast<int>(votes.size());
  for (const ScoreRecord& vote : votes) {
    if (vote.candidate_id != out.candidate_id) {
      fail(ErrorKind::InconsistentCandidateSets,
           "votes mix candidates '" + out.candidate_id + "' and '" + vote.candidate_id + "'");
    }
  }
  // All-equal vote sets have exactly zero variance, but the accumulated mean
  // can round off the common value when n is not a power of two; pin both so
  // the zero-variance identity uw == mean holds bitwise.
  bool all_equal = true;
  for (const ScoreRecord& vote : votes) {
    if (vote.reward != votes.front().reward) {
      all_equal = false;
      break;
    }
  }
  if (all_equal) {
    out.value = votes.front().reward;
    out.vote_std = 0.0;
    return out;
  }
  double mean = 0.0;
  for (const ScoreRecord& vote : votes) mean += vote.reward;
  mean /= static_cast<double>(votes.size());
  double var = 0.0;
  for (const ScoreRecord& vote : votes) {
    const double d = vote.reward - mean;
    var += d * d;
  }
  var /= static_cast<double>(votes.size());  // population variance
  out.vote_std = std::sqrt(var);
  out.value = mean;
  return out;
}

}  // namespace

AggregatedReward aggregate_mean(std::span<const ScoreRecord> votes) {
  return base_aggregate(votes, AggregationStrategy::mean);
}

AggregatedReward aggregate_min(std::span<const ScoreRecord> votes) {
  AggregatedReward out = base_aggregate(votes, AggregationStrategy::min);
  double lowest = votes.front().reward;
  for (const ScoreRecord& vote : votes) lowest = std::min(lowest, vote.reward);
  out.value = lowest;
  return out;
}

AggregatedReward aggregate_uw(std::span<const ScoreRecord> votes, double lambda) {
  AggregatedReward out = base_aggregate(votes, AggregationStrategy::uw);
  out.value = std::clamp(out.value - lambda * out.vote_std, 0.0, 1.0);
  return out;
}

AggregatedReward aggregate(std::span<const ScoreRecord> votes, const AggregatorConfig& config) {
  switch (config.strategy) {
    case AggregationStrategy::mean: return aggregate_mean(votes);
    case AggregationStrategy::min: return aggregate_min(votes);
    case AggregationStrategy::uw: return aggregate_uw(votes, config.lambda);
  }
  fail(ErrorKind::ConfigError, "unhandled aggregation strategy");
}

std::vector<ScoreRecord> filter_self_votes(std::span<const ScoreRecord> votes,
                                           const std::map<std::string, PeerId>& candidate_owner) {
  std::vector<ScoreRecord> kept;
  kept.reserve(votes.size());
  for (const ScoreRecord& vote : votes) {
    auto owner = candidate_owner.find(vote.candidate_id);
    if (owner != candidate_owner.end() && owner->second == vote.judge_id) continue;
    kept.push_back(vote);
  }
  return kept;
}

// ============================================================================
// Relative-mode aggregation
// ============================================================================

namespace {

std::vector<std::string> verdict_ranking(const RelativeVerdict& verdict) {
  if (verdict.has_ranking()) return verdict.ranking;
  // Score-bearing verdicts rank by descending score; ties keep the verdict's
  // own listing order (stable sort).
  std::vector<std::pair<std::string, double>> scored = verdict.scores;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ranking;
  ranking.reserve(scored.size());
  for (const auto& [id, score] : scored) ranking.push_back(id);
  return ranking;
}

}  // namespace

std::vector<std::pair<std::string, double>> aggregate_relative(
    std::span<const RelativeVerdict> verdicts, RelativeAggregation method) {
  if (verdicts.empty()) fail(ErrorKind::NoVotes, "relative aggregation over no verdicts");

  std::vector<std::vector<std::string>> rankings;
  rankings.reserve(verdicts.size());
  for (const RelativeVerdict& verdict : verdicts) rankings.push_back(verdict_ranking(verdict));

  std::set<std::string> reference(rankings.front().begin(), rankings.front().end());
  for (const auto& ranking : rankings) {
    std::set<std::string> ids(ranking.begin(), ranking.end());
    if (ids != reference) {
      fail(ErrorKind::InconsistentCandidateSets,
           "verdicts disagree on the candidate set being ranked");
    }
  }

  struct Tally {
    double rank_sum = 0.0;
    int first_place = 0;
  };
  std::map<std::string, Tally> tallies;
  for (const auto& ranking : rankings) {
    for (size_t position = 0; position < ranking.size(); ++position) {
      Tally& tally = tallies[ranking[position]];
      tally.rank_sum += static_cast<double>(position + 1);
      if (position == 0) ++tally.first_place;
    }
  }

  const double n = static_cast<double>(rankings.size());
  std::vector<std::pair<std::string, double>> out;
  out.reserve(tallies.size());
  if (method == RelativeAggregation::average_rank) {
    for (const auto& [id, tally] : tallies) out.emplace_back(id, tally.rank_sum / n);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second < b.second;  // lower mean rank first
      return a.first < b.first;
    });
  } else {
    for (const auto& [id, tally] : tallies) {
      out.emplace_back(id, static_cast<double>(tally.first_place));
    }
    std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;  // more first places first
      const double rank_a = tallies.at(a.first).rank_sum;
      const double rank_b = tallies.at(b.first).rank_sum;
      if (rank_a != rank_b) return rank_a < rank_b;
      return a.first < b.first;
    });
  }
  return out;
}

double rank_to_reward(double mean_rank, size_t k) {
  if (k < 2) return 1.0;
  return 1.0 - (mean_rank - 1.0) / (static_cast<double>(k) - 1.0);
}

}  // namespace pop
