#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pop/sampling.hpp"

namespace pop {

// ============================================================================
// Mixture-weighted query sampling
// ============================================================================

struct MixtureSpec {
  std::map<Category, double> weights;

  void validate() const;  // weights in [0,1], summing to 1 within 1e-9
  // Reference corpus proportions, normalized to sum to 1.
  static MixtureSpec reference_default();
};

struct MixtureSampleResult {
  std::vector<Query> queries;
  std::map<Category, size_t> counts;
  bool replacement_used = false;  // some category was exhausted mid-draw
};

// Draws n queries category-by-category from the weighted mixture. Within a
// category, queries are consumed in a seeded shuffled order without
// replacement; once exhausted, further draws are with replacement and the
// result is flagged. Throws EmptyCategory when a nonzero-weight category has
// no queries.
MixtureSampleResult sample_mixture(std::span<const Query> corpus, const MixtureSpec& spec, size_t n,
                                   uint64_t seed);

// ============================================================================
// Preference-pair curation
// ============================================================================

struct CurationConfig {
  double reward_threshold = 0.85;  // applies to the chosen response only
  double margin = 0.75;            // chosen_reward - rejected_reward floor
  size_t target_size = 300000;
  AggregatorConfig aggregator;
};

struct Provenance {
  PeerId peer_id;
  int sample_index = 0;
};

struct PreferencePair {
  std::string query_id;
  std::string image_ref;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
  Provenance chosen_provenance;
  Provenance rejected_provenance;
  int iteration = 0;
};

struct SftRecord {
  std::string query_id;
  std::string image_ref;
  std::string prompt;
  std::string target;
  double reward = 0.0;
};

enum class RejectReason {
  below_threshold,
  insufficient_margin,
  degenerate_pair,
  too_few_candidates,
  no_votes,
};

const char* to_string(RejectReason r);

struct PairOutcome {
  std::optional<PreferencePair> pair;
  std::optional<RejectReason> reject;
  bool accepted() const { return pair.has_value(); }
};

// chosen = best_of_n, rejected = worst_of_n, then the rejection-sampling
// filters: BelowThreshold, InsufficientMargin, DegeneratePair (identical
// texts). Throws TooFewCandidates below 2 entries.
PairOutcome select_pair(const CandidatePool& pool, const CurationConfig& config, const Query& query,
                        int iteration);

struct CurationStats {
  size_t pools = 0;
  size_t accepted = 0;
  size_t surplus = 0;  // accepted beyond target_size, not emitted
  std::map<RejectReason, size_t> rejected;
  std::map<Category, size_t> accepted_by_category;

  size_t rejected_total() const;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
};

// Applies select_pair to every pool in order and keeps the first target_size
// accepted pairs (target_size = 0 means unlimited). A short dataset is
// reported through stats, not an error.
PreferenceDataset build_dataset(std::span<const CandidatePool> pools, const CurationConfig& config,
                                const std::map<std::string, Query>& queries, int iteration,
                                CurationStats* stats = nullptr);

// Positive-feedback variant: per pool, the best entry is emitted when its
// reward clears the threshold; no margin requirement.
std::vector<SftRecord> build_sft_dataset(std::span<const CandidatePool> pools,
                                         const CurationConfig& config,
                                         const std::map<std::string, Query>& queries,
                                         CurationStats* stats = nullptr);

// ============================================================================
// JSON Lines persistence
// ============================================================================

void write_jsonl(const PreferenceDataset& dataset, const std::string& path);
// Structural validation per line; when `config` is given, the pair filters are
// re-validated on read. Throws IoError / SchemaViolation.
PreferenceDataset read_pairs_jsonl(const std::string& path,
                                   const CurationConfig* config = nullptr);

void write_jsonl(std::span<const SftRecord> records, const std::string& path);
std::vector<SftRecord> read_sft_jsonl(const std::string& path);

void write_query_corpus(std::span<const Query> corpus, const std::string& path);
std::vector<Query> read_query_corpus(const std::string& path);

}  // namespace pop
