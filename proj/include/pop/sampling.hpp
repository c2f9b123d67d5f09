#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pop/aggregate.hpp"
#include "pop/panel.hpp"

namespace pop {

// ============================================================================
// Candidate pools and Best-of-N selection
// ============================================================================

struct PoolEntry {
  Candidate candidate;
  AggregatedReward reward;
};

struct CandidatePool {
  std::string query_id;
  std::vector<PoolEntry> entries;  // canonical order: (member order, sample_index)
  PanelMode mode = PanelMode::multi_try;
  int excluded_no_votes = 0;  // candidates dropped because every judge vote was lost
};

// Argmax/argmin of the aggregated reward. Ties go to the lowest
// (member order, sample_index), i.e. the earliest entry in canonical order.
// Throw EmptyPool on an empty pool.
const PoolEntry& best_of_n(const CandidatePool& pool);
const PoolEntry& worst_of_n(const CandidatePool& pool);

// Joins candidates with their aggregated rewards in canonical order. Candidates
// absent from `rewards` are excluded and counted, unless they appear in `voted`
// (>= 1 surviving vote), in which case RewardMissing is thrown. Member order
// defaults to first appearance in `candidates`.
CandidatePool assemble_pool(std::span<const Candidate> candidates,
                            std::span<const AggregatedReward> rewards, PanelMode mode,
                            const std::map<PeerId, int>* member_order = nullptr,
                            const std::set<std::string>* voted = nullptr);

}  // namespace pop
