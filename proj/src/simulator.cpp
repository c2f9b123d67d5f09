#include "pop/simulator.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "pop/rng.hpp"
#include "pop/scoring.hpp"

namespace pop {

// ============================================================================
// Skill profiles
// ============================================================================

SkillProfile SkillProfile::uniform(double v) {
  SkillProfile profile;
  profile.skill.fill(v);
  return profile;
}

void SkillProfile::validate() const {
  for (Category c : kAllCategories) {
    const double v = get(c);
    if (v < 0.0 || v > 1.0) {
      fail(ErrorKind::ConfigError, std::string("skill for ") + to_string(c) + " = " +
                                       std::to_string(v) + " is outside [0, 1]");
    }
  }
}

// ============================================================================
// Generation and judging
// ============================================================================

SyntheticCandidate synth_generate(const SyntheticPeer& peer, const Query& query, int sample_index,
                                  uint64_t seed) {
  Rng rng(derive_seed(seed, {"gen", peer.id, query.id, std::to_string(sample_index)}));
  const double latent =
      std::clamp(rng.gaussian(peer.skills.get(query.category), peer.gen_noise), 0.0, 1.0);

  SyntheticCandidate out;
  out.latent_quality = latent;
  out.candidate.id = make_candidate_id(query.id, peer.id, sample_index);
  out.candidate.query_id = query.id;
  out.candidate.peer_id = peer.id;
  out.candidate.sample_index = sample_index;
  // The text is a stub; the quality bucket makes distinct latents produce
  // distinct texts so downstream pair filters behave as they would on prose.
  out.candidate.text = peer.id + " answer " + std::to_string(sample_index) + " to " + query.id +
                       " (quality " + std::to_string(static_cast<int>(std::lround(latent * 25.0))) +
                       ")";
  return out;
}

JudgeScores synth_judge(const SyntheticPeer& judge, const SyntheticCandidate& candidate,
                        Category category, uint64_t seed) {
  Rng rng(derive_seed(seed, {"judge", judge.id, candidate.candidate.id}));
  // Better judges observe latent quality with less noise.
  const double noise = judge.judge_noise * (1.0 - judge.skills.get(category));
  const double observed = std::clamp(candidate.latent_quality + rng.gaussian(0.0, noise), 0.0, 1.0);

  // Quantize onto the closest achievable five-axis sum, then spread the sum
  // across the axes as evenly as possible.
  const int sum = std::clamp(static_cast<int>(std::lround(observed * 25.0)), 5, 25);
  const int base = sum / 5;
  const int remainder = sum % 5;
  JudgeScores scores;
  int* axes[5] = {&scores.helpfulness, &scores.correctness, &scores.coherence, &scores.complexity,
                  &scores.verbosity};
  for (int i = 0; i < 5; ++i) *axes[i] = base + (i < remainder ? 1 : 0);
  return scores;
}

SyntheticPeer apply_update(const SyntheticPeer& peer, std::span<const CuratedSignal> signals,
                           double eta) {
  std::array<double, kCategoryCount> sum{};
  std::array<int, kCategoryCount> count{};
  for (const CuratedSignal& signal : signals) {
    sum[static_cast<size_t>(signal.category)] += signal.chosen_latent;
    ++count[static_cast<size_t>(signal.category)];
  }
  SyntheticPeer updated = peer;
  for (Category c : kAllCategories) {
    const size_t i = static_cast<size_t>(c);
    if (count[i] == 0) continue;
    const double mean = sum[i] / static_cast<double>(count[i]);
    updated.skills.set(c, peer.skills.get(c) + eta * (mean - peer.skills.get(c)));
  }
  return updated;
}

// ============================================================================
// Per-query pipeline
// ============================================================================

SyntheticQueryResult run_synthetic_query(const SyntheticPanelConfig& panel, const Query& query,
                                         const CurationConfig& curation, int iteration,
                                         uint64_t seed) {
  if (panel.peers.empty()) fail(ErrorKind::ConfigError, "synthetic panel has no peers");
  const uint64_t base = derive_seed(seed, {"sim", std::to_string(iteration), query.id});

  SyntheticQueryResult result;

  std::vector<SyntheticCandidate> generated;
  generated.reserve(panel.peers.size() * static_cast<size_t>(panel.samples_per_member));
  for (const SyntheticPeer& peer : panel.peers) {
    for (int k = 0; k < panel.samples_per_member; ++k) {
      generated.push_back(synth_generate(peer, query, k, base));
    }
  }

  std::vector<Candidate> candidates;
  candidates.reserve(generated.size());
  for (const SyntheticCandidate& c : generated) {
    candidates.push_back(c.candidate);
    result.latents[c.candidate.id] = c.latent_quality;
  }

  // Judge votes go through the same schema serialization and parsing as live
  // panel output, so the Likert pathway is exercised end to end.
  for (const SyntheticPeer& judge : panel.peers) {
    for (const SyntheticCandidate& candidate : generated) {
      if (!panel.include_self_eval && candidate.candidate.peer_id == judge.id) continue;
      const JudgeScores raw = synth_judge(judge, candidate, query.category, base);
      const JudgeScores parsed = parse_judge_output(to_schema_json(raw));
      ScoreRecord record;
      record.judge_id = judge.id;
      record.candidate_id = candidate.candidate.id;
      record.query_id = query.id;
      record.scores = parsed;
      record.reward = normalize(parsed);
      result.scores.push_back(std::move(record));
    }
  }

  // Aggregate per candidate in canonical candidate order.
  std::vector<AggregatedReward> rewards;
  std::set<std::string> voted;
  for (const Candidate& candidate : candidates) {
    std::vector<ScoreRecord> votes;
    for (const ScoreRecord& record : result.scores) {
      if (record.candidate_id == candidate.id) votes.push_back(record);
    }
    if (votes.empty()) continue;
    voted.insert(candidate.id);
    rewards.push_back(aggregate(votes, panel.aggregator));
  }

  std::map<PeerId, int> member_order;
  for (size_t i = 0; i < panel.peers.size(); ++i) {
    member_order[panel.peers[i].id] = static_cast<int>(i);
  }
  result.pool =
      assemble_pool(candidates, rewards, PanelMode::multi_try, &member_order, &voted);

  if (!result.pool.entries.empty()) {
    result.best_latent = result.latents.at(best_of_n(result.pool).candidate.id);
  }

  if (result.pool.entries.empty()) {
    result.outcome.reject = result.pool.excluded_no_votes > 0 ? RejectReason::no_votes
                                                              : RejectReason::too_few_candidates;
  } else if (result.pool.entries.size() < 2) {
    result.outcome.reject = RejectReason::too_few_candidates;
  } else {
    result.outcome = select_pair(result.pool, curation, query, iteration);
  }
  if (result.outcome.accepted()) {
    const std::string chosen_id =
        make_candidate_id(query.id, result.outcome.pair->chosen_provenance.peer_id,
                          result.outcome.pair->chosen_provenance.sample_index);
    result.chosen_latent = result.latents.at(chosen_id);
  }
  return result;
}

std::vector<SyntheticQueryResult> run_synthetic_queries_serial(
    const SyntheticPanelConfig& panel, std::span<const Query> queries,
    const CurationConfig& curation, int iteration, uint64_t seed) {
  std::vector<SyntheticQueryResult> results(queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    results[i] = run_synthetic_query(panel, queries[i], curation, iteration, seed);
  }
  return results;
}

std::vector<SyntheticQueryResult> run_synthetic_queries_parallel(
    const SyntheticPanelConfig& panel, std::span<const Query> queries,
    const CurationConfig& curation, int iteration, uint64_t seed, int threads) {
  std::vector<SyntheticQueryResult> results(queries.size());
#ifdef _OPENMP
  const int t = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(t)
#endif
  for (size_t i = 0; i < queries.size(); ++i) {
    results[i] = run_synthetic_query(panel, queries[i], curation, iteration, seed);
  }
  (void)threads;
  return results;
}

// ============================================================================
// Experiments
// ============================================================================

std::vector<Query> make_synthetic_corpus(size_t per_category, uint64_t seed) {
  std::vector<Query> corpus;
  corpus.reserve(per_category * kCategoryCount);
  const std::string nonce = hex64(derive_seed(seed, "corpus"));
  for (Category category : kAllCategories) {
    for (size_t k = 0; k < per_category; ++k) {
      Query query;
      query.id = std::string(to_string(category)) + "-q" + std::to_string(k);
      query.prompt = std::string("Synthetic ") + to_string(category) + " task " +
                     std::to_string(k) + " [corpus " + nonce + "]";
      query.category = category;
      corpus.push_back(std::move(query));
    }
  }
  return corpus;
}

namespace {

nlohmann::json peer_to_json(const SyntheticPeer& peer) {
  nlohmann::json skills;
  for (Category c : kAllCategories) skills[to_string(c)] = peer.skills.get(c);
  return {{"id", peer.id},
          {"skills", skills},
          {"gen_noise", peer.gen_noise},
          {"judge_noise", peer.judge_noise}};
}

std::string transfer_config_hash(const TransferConfig& config) {
  nlohmann::json j;
  for (const SyntheticPeer& peer : config.peers) j["peers"].push_back(peer_to_json(peer));
  for (const auto& [category, weight] : config.mixture.weights) {
    j["mixture"][to_string(category)] = weight;
  }
  j["reward_threshold"] = config.curation.reward_threshold;
  j["margin"] = config.curation.margin;
  j["target_size"] = config.curation.target_size;
  j["aggregator"] = to_string(config.curation.aggregator.strategy);
  j["lambda"] = config.curation.aggregator.lambda;
  j["iterations"] = config.iterations;
  j["queries_per_iteration"] = config.queries_per_iteration;
  j["samples_per_member"] = config.samples_per_member;
  j["include_self_eval"] = config.include_self_eval;
  j["eta"] = config.eta;
  j["seed"] = config.seed;
  j["corpus_per_category"] = config.corpus_per_category;
  // threads intentionally excluded: results are identical across thread counts
  return hex64(fnv1a64(j.dump()));
}

std::vector<SkillProfile> snapshot_skills(const std::vector<SyntheticPeer>& peers) {
  std::vector<SkillProfile> skills;
  skills.reserve(peers.size());
  for (const SyntheticPeer& peer : peers) skills.push_back(peer.skills);
  return skills;
}

}  // namespace

TransferReport run_transfer_experiment(const TransferConfig& config) {
  if (config.peers.size() < 2) {
    fail(ErrorKind::ConfigError, "transfer experiment needs at least 2 peers");
  }
  for (const SyntheticPeer& peer : config.peers) peer.skills.validate();
  config.mixture.validate();

  const std::vector<Query> corpus =
      make_synthetic_corpus(config.corpus_per_category, derive_seed(config.seed, "corpus"));

  TransferReport report;
  report.config_hash = transfer_config_hash(config);
  for (const SyntheticPeer& peer : config.peers) report.peer_ids.push_back(peer.id);

  std::vector<SyntheticPeer> peers = config.peers;
  report.per_iteration_skills.push_back(snapshot_skills(peers));

  for (int t = 1; t <= config.iterations; ++t) {
    const MixtureSampleResult sampled =
        sample_mixture(corpus, config.mixture, config.queries_per_iteration,
                       derive_seed(config.seed, {"mixture", std::to_string(t)}));

    SyntheticPanelConfig panel;
    panel.peers = peers;
    panel.samples_per_member = config.samples_per_member;
    panel.include_self_eval = config.include_self_eval;
    panel.aggregator = config.curation.aggregator;

    const std::vector<SyntheticQueryResult> results =
        config.threads == 1
            ? run_synthetic_queries_serial(panel, sampled.queries, config.curation, t, config.seed)
            : run_synthetic_queries_parallel(panel, sampled.queries, config.curation, t,
                                             config.seed, config.threads);

    CurationStats stats;
    stats.pools = results.size();
    std::vector<CuratedSignal> signals;
    for (size_t i = 0; i < results.size(); ++i) {
      const SyntheticQueryResult& result = results[i];
      if (result.outcome.accepted()) {
        ++stats.accepted;
        ++stats.accepted_by_category[sampled.queries[i].category];
        signals.push_back({sampled.queries[i].category, result.chosen_latent});
      } else {
        ++stats.rejected[*result.outcome.reject];
      }
    }

    // Every peer trains on the same curated dataset.
    std::vector<SyntheticPeer> updated;
    updated.reserve(peers.size());
    for (const SyntheticPeer& peer : peers) {
      updated.push_back(apply_update(peer, signals, config.eta));
    }
    peers = std::move(updated);

    report.per_iteration_skills.push_back(snapshot_skills(peers));
    report.per_iteration_stats.push_back(std::move(stats));
  }
  return report;
}

PanelVsSingleResult run_panel_vs_single(const PanelVsSingleConfig& config) {
  if (config.peers.size() < 2) {
    fail(ErrorKind::ConfigError, "panel-vs-single needs at least 2 peers");
  }

  struct QueryOutcome {
    double panel_pick = 0.0;
    double single_mean = 0.0;
  };
  std::vector<QueryOutcome> outcomes(config.n_queries);

#ifdef _OPENMP
  const int t = config.threads > 0 ? config.threads : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(t) if (config.threads != 1)
#endif
  for (size_t q = 0; q < config.n_queries; ++q) {
    Query query;
    query.id = "pvs-q" + std::to_string(q);
    query.prompt = "Panel-vs-single probe " + std::to_string(q);
    query.category = config.category;
    const uint64_t base = derive_seed(config.seed, {"pvs", std::to_string(q)});

    std::vector<SyntheticCandidate> generated;
    for (const SyntheticPeer& peer : config.peers) {
      for (int k = 0; k < config.samples_per_member; ++k) {
        generated.push_back(synth_generate(peer, query, k, base));
      }
    }

    // observed[j][c]: judge j's normalized reward for candidate c
    std::vector<std::vector<double>> observed(config.peers.size(),
                                              std::vector<double>(generated.size(), 0.0));
    for (size_t j = 0; j < config.peers.size(); ++j) {
      for (size_t c = 0; c < generated.size(); ++c) {
        observed[j][c] =
            normalize(synth_judge(config.peers[j], generated[c], config.category, base));
      }
    }

    // Panel pick: argmax of the judge-mean reward; ties keep the earliest.
    size_t panel_best = 0;
    double panel_best_reward = -1.0;
    for (size_t c = 0; c < generated.size(); ++c) {
      double mean = 0.0;
      for (size_t j = 0; j < config.peers.size(); ++j) mean += observed[j][c];
      mean /= static_cast<double>(config.peers.size());
      if (mean > panel_best_reward) {
        panel_best_reward = mean;
        panel_best = c;
      }
    }

    // Each judge picking alone.
    double single_sum = 0.0;
    for (size_t j = 0; j < config.peers.size(); ++j) {
      size_t best = 0;
      double best_reward = -1.0;
      for (size_t c = 0; c < generated.size(); ++c) {
        if (observed[j][c] > best_reward) {
          best_reward = observed[j][c];
          best = c;
        }
      }
      single_sum += generated[best].latent_quality;
    }

    outcomes[q].panel_pick = generated[panel_best].latent_quality;
    outcomes[q].single_mean = single_sum / static_cast<double>(config.peers.size());
  }

  PanelVsSingleResult result;
  for (const QueryOutcome& outcome : outcomes) {
    result.panel_selection_quality += outcome.panel_pick;
    result.mean_single_judge_quality += outcome.single_mean;
  }
  result.panel_selection_quality /= static_cast<double>(config.n_queries);
  result.mean_single_judge_quality /= static_cast<double>(config.n_queries);
  return result;
}

}  // namespace pop
