#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pop/curation.hpp"

namespace pop {

// ============================================================================
// Skill-profiled synthetic peers
// ============================================================================
//
// Desk-scale stand-ins for panel members. A peer's per-category skill sets the
// mean quality of what it generates; judging observes a candidate's latent
// quality through noise that shrinks as the judge's own skill grows. Observed
// quality is quantized through the Likert pathway (five axes summing to the
// nearest multiple of 0.04), so scoring and normalization stay in the loop.

struct SkillProfile {
  std::array<double, kCategoryCount> skill{};  // indexed by Category, each in [0,1]

  double get(Category c) const { return skill[static_cast<size_t>(c)]; }
  void set(Category c, double v) { skill[static_cast<size_t>(c)] = v; }
  static SkillProfile uniform(double v);
  void validate() const;  // throws ConfigError outside [0,1]
};

struct SyntheticPeer {
  PeerId id;
  SkillProfile skills;
  double gen_noise = 0.0;
  double judge_noise = 0.0;
};

struct SyntheticCandidate {
  Candidate candidate;
  double latent_quality = 0.0;  // hidden from judging except through noisy observation
};

// latent_quality = clamp(Normal(skill[category], gen_noise), 0, 1); the text is
// a stub embedding the peer id and the quality bucket.
SyntheticCandidate synth_generate(const SyntheticPeer& peer, const Query& query, int sample_index,
                                  uint64_t seed);

// observed = clamp(latent + Normal(0, judge_noise * (1 - judge skill)), 0, 1),
// then the closest achievable five-axis score (sum = round(observed * 25)).
JudgeScores synth_judge(const SyntheticPeer& judge, const SyntheticCandidate& candidate,
                        Category category, uint64_t seed);

struct CuratedSignal {
  Category category = Category::Language;
  double chosen_latent = 0.0;
};

// skill[c] <- skill[c] + eta * (mean chosen latent in c - skill[c]);
// categories with no signals are unchanged.
SyntheticPeer apply_update(const SyntheticPeer& peer, std::span<const CuratedSignal> signals,
                           double eta);

// ============================================================================
// Synthetic panel pipeline
// ============================================================================

struct SyntheticPanelConfig {
  std::vector<SyntheticPeer> peers;
  int samples_per_member = 15;
  bool include_self_eval = true;
  AggregatorConfig aggregator;
};

struct SyntheticQueryResult {
  CandidatePool pool;
  PairOutcome outcome;
  std::vector<ScoreRecord> scores;
  double chosen_latent = 0.0;    // latent of the pair's chosen response when accepted
  double best_latent = 0.0;      // latent of the best-of-pool entry
  std::map<std::string, double> latents;  // candidate id -> latent quality
};

// One full generate -> judge -> aggregate -> pool -> select_pair pass for one
// query. All randomness is split from (seed, iteration, query id, peer id,
// sample/candidate ids), so results do not depend on scheduling.
SyntheticQueryResult run_synthetic_query(const SyntheticPanelConfig& panel, const Query& query,
                                         const CurationConfig& curation, int iteration,
                                         uint64_t seed);

// Batch kernel over queries: serial reference and OpenMP implementations with
// identical outputs.
std::vector<SyntheticQueryResult> run_synthetic_queries_serial(
    const SyntheticPanelConfig& panel, std::span<const Query> queries,
    const CurationConfig& curation, int iteration, uint64_t seed);
std::vector<SyntheticQueryResult> run_synthetic_queries_parallel(
    const SyntheticPanelConfig& panel, std::span<const Query> queries,
    const CurationConfig& curation, int iteration, uint64_t seed, int threads = 0);

// ============================================================================
// Experiments
// ============================================================================

// Synthetic corpus: `per_category` stub queries for every category.
std::vector<Query> make_synthetic_corpus(size_t per_category, uint64_t seed);

struct TransferConfig {
  std::vector<SyntheticPeer> peers;
  MixtureSpec mixture;
  CurationConfig curation;
  int iterations = 3;
  size_t queries_per_iteration = 48;
  int samples_per_member = 8;
  bool include_self_eval = true;
  double eta = 0.5;
  uint64_t seed = 0;
  size_t corpus_per_category = 256;
  int threads = 1;
};

struct TransferReport {
  std::string config_hash;
  // skills[t][p]: peer p's profile after iteration t; index 0 is the initial state
  std::vector<std::vector<SkillProfile>> per_iteration_skills;
  std::vector<CurationStats> per_iteration_stats;
  std::vector<PeerId> peer_ids;
};

// Full PoP loop over synthetic peers: generate -> judge -> aggregate ->
// curate -> apply_update per iteration. Bit-reproducible given (config, seed).
TransferReport run_transfer_experiment(const TransferConfig& config);

struct PanelVsSingleConfig {
  std::vector<SyntheticPeer> peers;
  Category category = Category::GeneralKnowledge;
  size_t n_queries = 200;
  int samples_per_member = 5;
  uint64_t seed = 0;
  int threads = 1;
};

struct PanelVsSingleResult {
  double panel_selection_quality = 0.0;       // mean latent of the panel-mean pick
  double mean_single_judge_quality = 0.0;     // mean latent over per-judge solo picks
};

// For each query, compares Best-of-N under panel-mean aggregation against the
// average over each judge selecting alone.
PanelVsSingleResult run_panel_vs_single(const PanelVsSingleConfig& config);

}  // namespace pop
