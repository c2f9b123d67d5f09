#include "pop/sampling.hpp"

#include <algorithm>
#include <unordered_map>

namespace pop {

const PoolEntry& best_of_n(const CandidatePool& pool) {
  if (pool.entries.empty()) fail(ErrorKind::EmptyPool, "best-of-n over query '" + pool.query_id + "'");
  const PoolEntry* best = &pool.entries.front();
  for (const PoolEntry& entry : pool.entries) {
    if (entry.reward.value > best->reward.value) best = &entry;  // strict: ties keep the earliest
  }
  return *best;
}

const PoolEntry& worst_of_n(const CandidatePool& pool) {
  if (pool.entries.empty()) {
    fail(ErrorKind::EmptyPool, "worst-of-n over query '" + pool.query_id + "'");
  }
  const PoolEntry* worst = &pool.entries.front();
  for (const PoolEntry& entry : pool.entries) {
    if (entry.reward.value < worst->reward.value) worst = &entry;
  }
  return *worst;
}

CandidatePool assemble_pool(std::span<const Candidate> candidates,
                            std::span<const AggregatedReward> rewards, PanelMode mode,
                            const std::map<PeerId, int>* member_order,
                            const std::set<std::string>* voted) {
  CandidatePool pool;
  pool.mode = mode;
  if (!candidates.empty()) pool.query_id = candidates.front().query_id;

  std::unordered_map<std::string, const AggregatedReward*> by_candidate;
  by_candidate.reserve(rewards.size());
  for (const AggregatedReward& reward : rewards) by_candidate[reward.candidate_id] = &reward;

  // First appearance defines member order unless the panel supplied its own.
  std::map<PeerId, int> discovered;
  for (const Candidate& candidate : candidates) {
    discovered.emplace(candidate.peer_id, static_cast<int>(discovered.size()));
  }
  auto order_of = [&](const PeerId& peer) -> int {
    if (member_order) {
      auto it = member_order->find(peer);
      if (it != member_order->end()) return it->second;
    }
    // Unknown peers sort after every configured member, in first-seen order.
    return discovered.at(peer) + 1000000;
  };

  for (const Candidate& candidate : candidates) {
    if (candidate.query_id != pool.query_id) {
      fail(ErrorKind::InconsistentCandidateSets,
           "pool mixes queries '" + pool.query_id + "' and '" + candidate.query_id + "'");
    }
    auto it = by_candidate.find(candidate.id);
    if (it == by_candidate.end()) {
      if (voted && voted->count(candidate.id)) {
        // The candidate had surviving votes, so an aggregate must exist; a gap
        // here means rewards and votes have drifted apart.
        fail(ErrorKind::RewardMissing, "candidate '" + candidate.id + "' has votes but no reward");
      }
      ++pool.excluded_no_votes;
      continue;
    }
    pool.entries.push_back({candidate, *it->second});
  }

  std::stable_sort(pool.entries.begin(), pool.entries.end(),
                   [&](const PoolEntry& a, const PoolEntry& b) {
                     const int oa = order_of(a.candidate.peer_id);
                     const int ob = order_of(b.candidate.peer_id);
                     if (oa != ob) return oa < ob;
                     return a.candidate.sample_index < b.candidate.sample_index;
                   });
  return pool;
}

}  // namespace pop
