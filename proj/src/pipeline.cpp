#include "pop/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pop {

namespace {

struct JudgeTask {
  const PeerHandle* judge = nullptr;
  const Query* query = nullptr;
  const Candidate* candidate = nullptr;               // absolute mode
  const std::vector<Candidate>* pool_candidates = nullptr;  // relative mode
};

struct TaskResult {
  std::optional<ScoreRecord> score;
  std::optional<RelativeVerdict> verdict;
  bool dropped = false;
};

// Canonical task order: (query, candidate, judge) for absolute scoring,
// (query, judge) for relative. The fold walks this order, so parallel
// execution cannot reorder the output.
std::vector<JudgeTask> plan_tasks(std::span<const PeerHandle> judges,
                                  std::span<const Query> queries,
                                  const std::unordered_map<std::string, std::vector<Candidate>>&
                                      by_query,
                                  const JudgeStageOptions& options) {
  std::vector<JudgeTask> tasks;
  for (const Query& query : queries) {
    auto it = by_query.find(query.id);
    if (it == by_query.end() || it->second.empty()) continue;
    if (options.scoring_mode == ScoringMode::absolute) {
      for (const Candidate& candidate : it->second) {
        for (const PeerHandle& judge : judges) {
          if (!judge.can_judge) continue;
          if (!options.include_self_eval && candidate.peer_id == judge.id) continue;
          tasks.push_back({&judge, &query, &candidate, nullptr});
        }
      }
    } else {
      if (it->second.size() < 2) continue;  // nothing to rank
      for (const PeerHandle& judge : judges) {
        if (!judge.can_judge) continue;
        tasks.push_back({&judge, &query, nullptr, &it->second});
      }
    }
  }
  return tasks;
}

TaskResult run_task(const JudgeTask& task, const JudgeStageOptions& options) {
  TaskResult result;
  JudgeOptions judge_options;
  judge_options.temperature = options.temperature;
  judge_options.max_tokens = options.max_tokens;
  try {
    if (task.candidate) {
      judge_options.seed =
          derive_seed(options.seed, {"judge", task.judge->id, task.candidate->id});
      result.score = judge_candidate(*task.judge, *task.query, *task.candidate, judge_options);
    } else {
      judge_options.seed = options.seed;
      RelativePromptOptions prompt_options;
      prompt_options.output = options.relative_output;
      prompt_options.context_budget_chars = options.context_budget_chars;
      prompt_options.seed = options.seed;
      result.verdict = judge_relative(*task.judge, *task.query, *task.pool_candidates,
                                      prompt_options, judge_options);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::JudgeFailed) throw;
    result.dropped = true;  // this judge's vote is simply absent
  }
  return result;
}

std::unordered_map<std::string, std::vector<Candidate>> group_by_query(
    std::span<const Candidate> candidates) {
  std::unordered_map<std::string, std::vector<Candidate>> by_query;
  for (const Candidate& candidate : candidates) {
    by_query[candidate.query_id].push_back(candidate);
  }
  return by_query;
}

JudgeStageResult fold_results(std::vector<TaskResult>&& slots) {
  JudgeStageResult out;
  for (TaskResult& slot : slots) {
    if (slot.dropped) {
      ++out.dropped_votes;
    } else if (slot.score) {
      out.scores.push_back(std::move(*slot.score));
    } else if (slot.verdict) {
      out.verdicts.push_back(std::move(*slot.verdict));
    }
  }
  return out;
}

}  // namespace

JudgeStageResult judge_all_serial(std::span<const PeerHandle> judges,
                                  std::span<const Query> queries,
                                  std::span<const Candidate> candidates,
                                  const JudgeStageOptions& options) {
  const auto by_query = group_by_query(candidates);
  const std::vector<JudgeTask> tasks = plan_tasks(judges, queries, by_query, options);
  std::vector<TaskResult> slots(tasks.size());
  for (size_t i = 0; i < tasks.size(); ++i) slots[i] = run_task(tasks[i], options);
  return fold_results(std::move(slots));
}

JudgeStageResult judge_all_parallel(std::span<const PeerHandle> judges,
                                    std::span<const Query> queries,
                                    std::span<const Candidate> candidates,
                                    const JudgeStageOptions& options, int threads) {
  const auto by_query = group_by_query(candidates);
  const std::vector<JudgeTask> tasks = plan_tasks(judges, queries, by_query, options);
  std::vector<TaskResult> slots(tasks.size());
#ifdef _OPENMP
  const int t = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(t)
#endif
  for (size_t i = 0; i < tasks.size(); ++i) slots[i] = run_task(tasks[i], options);
  (void)threads;
  return fold_results(std::move(slots));
}

JudgeStageResult judge_all(std::span<const PeerHandle> judges, std::span<const Query> queries,
                           std::span<const Candidate> candidates,
                           const JudgeStageOptions& options, int threads) {
  if (threads == 1) return judge_all_serial(judges, queries, candidates, options);
  return judge_all_parallel(judges, queries, candidates, options, threads);
}

// ============================================================================
// Aggregation stages
// ============================================================================

std::vector<AggregatedReward> aggregate_stage(std::span<const ScoreRecord> scores,
                                              std::span<const Candidate> candidates,
                                              const AggregatorConfig& config,
                                              std::set<std::string>* voted) {
  std::span<const ScoreRecord> effective = scores;
  std::vector<ScoreRecord> filtered;
  if (config.exclude_self_eval) {
    std::map<std::string, PeerId> owner;
    for (const Candidate& candidate : candidates) owner[candidate.id] = candidate.peer_id;
    filtered = filter_self_votes(scores, owner);
    effective = filtered;
  }

  std::unordered_map<std::string, std::vector<ScoreRecord>> votes_by_candidate;
  for (const ScoreRecord& record : effective) {
    votes_by_candidate[record.candidate_id].push_back(record);
  }

  std::vector<AggregatedReward> rewards;
  for (const Candidate& candidate : candidates) {
    auto it = votes_by_candidate.find(candidate.id);
    if (it == votes_by_candidate.end()) continue;  // every vote was dropped
    if (voted) voted->insert(candidate.id);
    rewards.push_back(aggregate(it->second, config));
  }
  return rewards;
}

std::vector<AggregatedReward> aggregate_relative_stage(std::span<const RelativeVerdict> verdicts,
                                                       std::span<const Candidate> candidates,
                                                       std::set<std::string>* voted) {
  std::unordered_map<std::string, const Candidate*> by_id;
  std::vector<std::string> query_order;
  std::unordered_map<std::string, bool> query_seen;
  for (const Candidate& candidate : candidates) {
    by_id[candidate.id] = &candidate;
    if (!query_seen[candidate.query_id]) {
      query_seen[candidate.query_id] = true;
      query_order.push_back(candidate.query_id);
    }
  }

  // A verdict names only candidate ids; any one of them pins down its query.
  std::unordered_map<std::string, std::vector<RelativeVerdict>> verdicts_by_query;
  for (const RelativeVerdict& verdict : verdicts) {
    const std::string& sample_id =
        verdict.has_ranking() ? verdict.ranking.front() : verdict.scores.front().first;
    auto it = by_id.find(sample_id);
    if (it == by_id.end()) {
      fail(ErrorKind::InconsistentCandidateSets,
           "verdict names unknown candidate '" + sample_id + "'");
    }
    verdicts_by_query[it->second->query_id].push_back(verdict);
  }

  std::vector<AggregatedReward> rewards;
  for (const std::string& query_id : query_order) {
    auto bucket = verdicts_by_query.find(query_id);
    if (bucket == verdicts_by_query.end()) continue;

    // Per-candidate reward contribution per verdict: rankings map position p
    // of k onto 1 - p/(k-1); score verdicts contribute the score itself.
    std::map<std::string, std::vector<double>> contributions;
    for (const RelativeVerdict& verdict : bucket->second) {
      if (verdict.has_ranking()) {
        const size_t k = verdict.ranking.size();
        for (size_t p = 0; p < k; ++p) {
          contributions[verdict.ranking[p]].push_back(
              rank_to_reward(static_cast<double>(p + 1), k));
        }
      } else {
        for (const auto& [id, score] : verdict.scores) contributions[id].push_back(score);
      }
    }

    for (const Candidate& candidate : candidates) {
      if (candidate.query_id != query_id) continue;
      auto it = contributions.find(candidate.id);
      if (it == contributions.end()) continue;
      const std::vector<double>& values = it->second;
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(values.size());

      AggregatedReward reward;
      reward.candidate_id = candidate.id;
      reward.query_id = query_id;
      reward.value = mean;
      reward.strategy = AggregationStrategy::mean;
      reward.n_votes = static_cast<int>(values.size());
      reward.vote_std = std::sqrt(var);
      rewards.push_back(std::move(reward));
      if (voted) voted->insert(candidate.id);
    }
  }
  return rewards;
}

std::vector<CandidatePool> pool_stage(std::span<const Query> queries,
                                      std::span<const Candidate> candidates,
                                      std::span<const AggregatedReward> rewards, PanelMode mode,
                                      const std::map<PeerId, int>& member_order,
                                      const std::set<std::string>* voted) {
  const auto by_query = group_by_query(candidates);
  std::unordered_map<std::string, std::vector<AggregatedReward>> rewards_by_query;
  for (const AggregatedReward& reward : rewards) {
    rewards_by_query[reward.query_id].push_back(reward);
  }

  std::vector<CandidatePool> pools;
  pools.reserve(queries.size());
  static const std::vector<Candidate> no_candidates;
  static const std::vector<AggregatedReward> no_rewards;
  for (const Query& query : queries) {
    auto c_it = by_query.find(query.id);
    auto r_it = rewards_by_query.find(query.id);
    const std::vector<Candidate>& q_candidates =
        c_it == by_query.end() ? no_candidates : c_it->second;
    const std::vector<AggregatedReward>& q_rewards =
        r_it == rewards_by_query.end() ? no_rewards : r_it->second;
    CandidatePool pool = assemble_pool(q_candidates, q_rewards, mode, &member_order, voted);
    pool.query_id = query.id;  // keep the id even when no candidate survived
    pools.push_back(std::move(pool));
  }
  return pools;
}

}  // namespace pop
