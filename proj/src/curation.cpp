#include "pop/curation.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "pop/io.hpp"
#include "pop/rng.hpp"

namespace pop {

// ============================================================================
// Mixture sampling
// ============================================================================

void MixtureSpec::validate() const {
  if (weights.empty()) fail(ErrorKind::ConfigError, "mixture has no categories");
  double sum = 0.0;
  for (const auto& [category, weight] : weights) {
    if (weight < 0.0 || weight > 1.0) {
      fail(ErrorKind::ConfigError, std::string("mixture weight for ") + to_string(category) +
                                       " = " + std::to_string(weight) + " is outside [0, 1]");
    }
    sum += weight;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    fail(ErrorKind::ConfigError, "mixture weights sum to " + std::to_string(sum) + ", expected 1");
  }
}

MixtureSpec MixtureSpec::reference_default() {
  // Published corpus proportions; the raw figures total 100.40%, so they are
  // normalized here to a proper distribution.
  static const std::map<Category, double> raw = {
      {Category::Language, 21.00},      {Category::GeneralKnowledge, 34.52},
      {Category::OCR, 27.22},           {Category::Counting, 8.71},
      {Category::Math, 7.20},           {Category::Code, 0.87},
      {Category::ScientificKnowledge, 0.88},
  };
  double total = 0.0;
  for (const auto& [category, weight] : raw) total += weight;
  MixtureSpec spec;
  for (const auto& [category, weight] : raw) spec.weights[category] = weight / total;
  return spec;
}

MixtureSampleResult sample_mixture(std::span<const Query> corpus, const MixtureSpec& spec, size_t n,
                                   uint64_t seed) {
  spec.validate();

  std::map<Category, std::vector<size_t>> by_category;
  for (size_t i = 0; i < corpus.size(); ++i) by_category[corpus[i].category].push_back(i);

  for (const auto& [category, weight] : spec.weights) {
    if (weight > 0.0 && by_category[category].empty()) {
      fail(ErrorKind::EmptyCategory,
           std::string("mixture needs ") + to_string(category) + " but the corpus has none");
    }
  }

  // Each category gets its own shuffled consumption order so that adding
  // queries to one category never disturbs another's draw sequence.
  std::map<Category, size_t> cursor;
  for (auto& [category, indices] : by_category) {
    Rng shuffler(derive_seed(seed, {"mixture-shuffle", to_string(category)}));
    shuffler.shuffle(indices.data(), indices.size());
    cursor[category] = 0;
  }

  MixtureSampleResult result;
  result.queries.reserve(n);
  Rng draws(derive_seed(seed, "mixture-draws"));
  for (size_t k = 0; k < n; ++k) {
    const double r = draws.uniform();
    Category picked = Category::Language;
    double cumulative = 0.0;
    bool found = false;
    for (Category category : kAllCategories) {
      auto it = spec.weights.find(category);
      if (it == spec.weights.end() || it->second <= 0.0) continue;
      cumulative += it->second;
      picked = category;
      if (r < cumulative) {
        found = true;
        break;
      }
    }
    (void)found;  // r may land on 1.0-cumulative rounding; the last category absorbs it

    std::vector<size_t>& indices = by_category[picked];
    size_t& at = cursor[picked];
    size_t corpus_index;
    if (at < indices.size()) {
      corpus_index = indices[at++];
    } else {
      result.replacement_used = true;
      corpus_index = indices[draws.uniform_index(indices.size())];
    }
    result.queries.push_back(corpus[corpus_index]);
    ++result.counts[picked];
  }
  return result;
}

// ============================================================================
// Pair selection
// ============================================================================

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::below_threshold: return "below_threshold";
    case RejectReason::insufficient_margin: return "insufficient_margin";
    case RejectReason::degenerate_pair: return "degenerate_pair";
    case RejectReason::too_few_candidates: return "too_few_candidates";
    case RejectReason::no_votes: return "no_votes";
  }
  return "unknown";
}

PairOutcome select_pair(const CandidatePool& pool, const CurationConfig& config, const Query& query,
                        int iteration) {
  if (pool.entries.size() < 2) {
    fail(ErrorKind::TooFewCandidates, "pair selection needs at least 2 candidates, got " +
                                          std::to_string(pool.entries.size()));
  }
  const PoolEntry& chosen = best_of_n(pool);
  const PoolEntry& rejected = worst_of_n(pool);

  PairOutcome outcome;
  if (chosen.reward.value < config.reward_threshold) {
    outcome.reject = RejectReason::below_threshold;
    return outcome;
  }
  if (chosen.reward.value - rejected.reward.value < config.margin) {
    outcome.reject = RejectReason::insufficient_margin;
    return outcome;
  }
  if (chosen.candidate.text == rejected.candidate.text) {
    outcome.reject = RejectReason::degenerate_pair;
    return outcome;
  }

  PreferencePair pair;
  pair.query_id = query.id;
  pair.image_ref = query.image_ref;
  pair.prompt = query.prompt;
  pair.chosen = chosen.candidate.text;
  pair.rejected = rejected.candidate.text;
  pair.chosen_reward = chosen.reward.value;
  pair.rejected_reward = rejected.reward.value;
  pair.chosen_provenance = {chosen.candidate.peer_id, chosen.candidate.sample_index};
  pair.rejected_provenance = {rejected.candidate.peer_id, rejected.candidate.sample_index};
  pair.iteration = iteration;
  outcome.pair = std::move(pair);
  return outcome;
}

size_t CurationStats::rejected_total() const {
  size_t total = 0;
  for (const auto& [reason, count] : rejected) total += count;
  return total;
}

namespace {

const Query& query_for_pool(const std::map<std::string, Query>& queries,
                            const std::string& query_id) {
  auto it = queries.find(query_id);
  if (it == queries.end()) {
    fail(ErrorKind::SchemaViolation, "pool references unknown query '" + query_id + "'");
  }
  return it->second;
}

// Pools that cannot produce a pair at all, before the reward filters run.
std::optional<RejectReason> structural_reject(const CandidatePool& pool) {
  if (pool.entries.empty()) {
    return pool.excluded_no_votes > 0 ? RejectReason::no_votes : RejectReason::too_few_candidates;
  }
  if (pool.entries.size() < 2) return RejectReason::too_few_candidates;
  return std::nullopt;
}

}  // namespace

PreferenceDataset build_dataset(std::span<const CandidatePool> pools, const CurationConfig& config,
                                const std::map<std::string, Query>& queries, int iteration,
                                CurationStats* stats) {
  CurationStats local;
  CurationStats& s = stats ? *stats : local;
  s = CurationStats{};
  s.pools = pools.size();

  PreferenceDataset dataset;
  for (const CandidatePool& pool : pools) {
    if (auto reject = structural_reject(pool)) {
      ++s.rejected[*reject];
      continue;
    }
    const Query& query = query_for_pool(queries, pool.query_id);
    PairOutcome outcome = select_pair(pool, config, query, iteration);
    if (!outcome.accepted()) {
      ++s.rejected[*outcome.reject];
      continue;
    }
    ++s.accepted;
    ++s.accepted_by_category[query.category];
    if (config.target_size == 0 || dataset.pairs.size() < config.target_size) {
      dataset.pairs.push_back(std::move(*outcome.pair));
    } else {
      ++s.surplus;
    }
  }
  return dataset;
}

std::vector<SftRecord> build_sft_dataset(std::span<const CandidatePool> pools,
                                         const CurationConfig& config,
                                         const std::map<std::string, Query>& queries,
                                         CurationStats* stats) {
  CurationStats local;
  CurationStats& s = stats ? *stats : local;
  s = CurationStats{};
  s.pools = pools.size();

  std::vector<SftRecord> records;
  for (const CandidatePool& pool : pools) {
    if (pool.entries.empty()) {
      ++s.rejected[pool.excluded_no_votes > 0 ? RejectReason::no_votes
                                              : RejectReason::too_few_candidates];
      continue;
    }
    const Query& query = query_for_pool(queries, pool.query_id);
    const PoolEntry& best = best_of_n(pool);
    if (best.reward.value < config.reward_threshold) {
      ++s.rejected[RejectReason::below_threshold];
      continue;
    }
    ++s.accepted;
    ++s.accepted_by_category[query.category];
    if (config.target_size == 0 || records.size() < config.target_size) {
      SftRecord record;
      record.query_id = query.id;
      record.image_ref = query.image_ref;
      record.prompt = query.prompt;
      record.target = best.candidate.text;
      record.reward = best.reward.value;
      records.push_back(std::move(record));
    } else {
      ++s.surplus;
    }
  }
  return records;
}

// ============================================================================
// JSON Lines persistence
// ============================================================================

namespace {

nlohmann::json provenance_to_json(const Provenance& p) {
  return {{"peer_id", p.peer_id}, {"sample_index", p.sample_index}};
}

Provenance provenance_from_json(const nlohmann::json& j, size_t line) {
  if (!j.is_object() || !j.contains("peer_id") || !j["peer_id"].is_string() ||
      !j.contains("sample_index") || !j["sample_index"].is_number_integer()) {
    fail(ErrorKind::SchemaViolation, "line " + std::to_string(line) + ": malformed provenance");
  }
  return {j["peer_id"].get<std::string>(), j["sample_index"].get<int>()};
}

void require_field(const nlohmann::json& j, const char* key, size_t line, bool is_string) {
  if (!j.contains(key)) {
    fail(ErrorKind::SchemaViolation,
         "line " + std::to_string(line) + ": missing \"" + key + "\"");
  }
  if (is_string ? !j[key].is_string() : !j[key].is_number()) {
    fail(ErrorKind::SchemaViolation,
         "line " + std::to_string(line) + ": \"" + key + "\" has the wrong type");
  }
}

nlohmann::json pair_to_json(const PreferencePair& pair) {
  nlohmann::json j{
      {"chosen", pair.chosen},
      {"chosen_provenance", provenance_to_json(pair.chosen_provenance)},
      {"chosen_reward", pair.chosen_reward},
      {"iteration", pair.iteration},
      {"prompt", pair.prompt},
      {"query_id", pair.query_id},
      {"rejected", pair.rejected},
      {"rejected_provenance", provenance_to_json(pair.rejected_provenance)},
      {"rejected_reward", pair.rejected_reward},
  };
  if (!pair.image_ref.empty()) j["image_ref"] = pair.image_ref;
  return j;
}

PreferencePair pair_from_json(const nlohmann::json& j, size_t line) {
  for (const char* key : {"chosen", "prompt", "query_id", "rejected"}) {
    require_field(j, key, line, /*is_string=*/true);
  }
  for (const char* key : {"chosen_reward", "rejected_reward", "iteration"}) {
    require_field(j, key, line, /*is_string=*/false);
  }
  if (!j.contains("chosen_provenance") || !j.contains("rejected_provenance")) {
    fail(ErrorKind::SchemaViolation, "line " + std::to_string(line) + ": missing provenance");
  }
  PreferencePair pair;
  pair.query_id = j["query_id"].get<std::string>();
  pair.image_ref = j.value("image_ref", "");
  pair.prompt = j["prompt"].get<std::string>();
  pair.chosen = j["chosen"].get<std::string>();
  pair.rejected = j["rejected"].get<std::string>();
  pair.chosen_reward = j["chosen_reward"].get<double>();
  pair.rejected_reward = j["rejected_reward"].get<double>();
  pair.chosen_provenance = provenance_from_json(j["chosen_provenance"], line);
  pair.rejected_provenance = provenance_from_json(j["rejected_provenance"], line);
  pair.iteration = j["iteration"].get<int>();
  return pair;
}

}  // namespace

void write_jsonl(const PreferenceDataset& dataset, const std::string& path) {
  std::vector<nlohmann::json> lines;
  lines.reserve(dataset.pairs.size());
  for (const PreferencePair& pair : dataset.pairs) lines.push_back(pair_to_json(pair));
  write_jsonl_file(path, lines);
}

PreferenceDataset read_pairs_jsonl(const std::string& path, const CurationConfig* config) {
  PreferenceDataset dataset;
  const std::vector<nlohmann::json> lines = read_jsonl_file(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line = i + 1;
    PreferencePair pair = pair_from_json(lines[i], line);
    if (config) {
      if (pair.chosen_reward < config->reward_threshold) {
        fail(ErrorKind::SchemaViolation,
             "line " + std::to_string(line) + ": chosen reward below threshold");
      }
      if (pair.chosen_reward - pair.rejected_reward < config->margin) {
        fail(ErrorKind::SchemaViolation,
             "line " + std::to_string(line) + ": reward margin below minimum");
      }
      if (pair.chosen == pair.rejected) {
        fail(ErrorKind::SchemaViolation,
             "line " + std::to_string(line) + ": chosen and rejected are identical");
      }
    }
    dataset.pairs.push_back(std::move(pair));
  }
  return dataset;
}

void write_jsonl(std::span<const SftRecord> records, const std::string& path) {
  std::vector<nlohmann::json> lines;
  lines.reserve(records.size());
  for (const SftRecord& record : records) {
    nlohmann::json j{
        {"prompt", record.prompt},
        {"query_id", record.query_id},
        {"reward", record.reward},
        {"target", record.target},
    };
    if (!record.image_ref.empty()) j["image_ref"] = record.image_ref;
    lines.push_back(std::move(j));
  }
  write_jsonl_file(path, lines);
}

std::vector<SftRecord> read_sft_jsonl(const std::string& path) {
  std::vector<SftRecord> records;
  const std::vector<nlohmann::json> lines = read_jsonl_file(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line = i + 1;
    const nlohmann::json& j = lines[i];
    for (const char* key : {"prompt", "query_id", "target"}) {
      require_field(j, key, line, /*is_string=*/true);
    }
    require_field(j, "reward", line, /*is_string=*/false);
    SftRecord record;
    record.query_id = j["query_id"].get<std::string>();
    record.image_ref = j.value("image_ref", "");
    record.prompt = j["prompt"].get<std::string>();
    record.target = j["target"].get<std::string>();
    record.reward = j["reward"].get<double>();
    records.push_back(std::move(record));
  }
  return records;
}

void write_query_corpus(std::span<const Query> corpus, const std::string& path) {
  std::vector<nlohmann::json> lines;
  lines.reserve(corpus.size());
  for (const Query& query : corpus) {
    nlohmann::json j{
        {"category", to_string(query.category)},
        {"id", query.id},
        {"prompt", query.prompt},
    };
    if (!query.image_ref.empty()) j["image_ref"] = query.image_ref;
    lines.push_back(std::move(j));
  }
  write_jsonl_file(path, lines);
}

std::vector<Query> read_query_corpus(const std::string& path) {
  std::vector<Query> corpus;
  const std::vector<nlohmann::json> lines = read_jsonl_file(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line = i + 1;
    const nlohmann::json& j = lines[i];
    for (const char* key : {"category", "id", "prompt"}) {
      require_field(j, key, line, /*is_string=*/true);
    }
    Query query;
    query.id = j["id"].get<std::string>();
    query.image_ref = j.value("image_ref", "");
    query.prompt = j["prompt"].get<std::string>();
    try {
      query.category = category_from_string(j["category"].get<std::string>());
    } catch (const Error&) {
      fail(ErrorKind::SchemaViolation, "line " + std::to_string(line) + ": unknown category '" +
                                           j["category"].get<std::string>() + "'");
    }
    corpus.push_back(std::move(query));
  }
  return corpus;
}

}  // namespace pop
