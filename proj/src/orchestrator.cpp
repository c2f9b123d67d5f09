#include "pop/orchestrator.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <set>

#include "pop/http_backend.hpp"
#include "pop/io.hpp"

namespace pop {

// ============================================================================
// Configuration parsing
// ============================================================================

namespace {

template <typename T>
T field_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::ConfigError, std::string("config field \"") + key + "\" has the wrong type");
  }
}

std::shared_ptr<GenerationBackend> build_backend(const nlohmann::json& spec,
                                                 const std::string& member_id) {
  if (!spec.is_object() || !spec.contains("kind")) {
    fail(ErrorKind::ConfigError, "member '" + member_id + "' backend needs a \"kind\"");
  }
  const std::string kind = spec.at("kind").get<std::string>();
  if (kind == "scripted") {
    if (spec.contains("path")) {
      return ScriptedBackend::from_file(spec.at("path").get<std::string>());
    }
    if (spec.contains("table")) {
      std::map<std::string, std::string> table;
      for (const auto& [key, value] : spec.at("table").items()) {
        table[key] = value.get<std::string>();
      }
      return std::make_shared<ScriptedBackend>(std::move(table), "scripted:" + member_id);
    }
    fail(ErrorKind::ConfigError,
         "scripted backend for '" + member_id + "' needs \"path\" or \"table\"");
  }
  if (kind == "fixed") {
    return ScriptedBackend::fixed(spec.at("response").get<std::string>(),
                                  "fixed:" + member_id);
  }
  if (kind == "sequence") {
    std::vector<std::string> responses;
    for (const auto& entry : spec.at("responses")) responses.push_back(entry.get<std::string>());
    return ScriptedBackend::sequence(std::move(responses), "sequence:" + member_id);
  }
  if (kind == "http") {
    HttpBackendConfig http;
    http.base_url = spec.at("base_url").get<std::string>();
    http.path = field_or<std::string>(spec, "path", http.path);
    http.model = field_or<std::string>(spec, "model", member_id);
    if (spec.contains("api_key_env")) {
      // Secrets come through the environment, never the config file.
      const char* key = std::getenv(spec.at("api_key_env").get<std::string>().c_str());
      if (key) http.api_key = key;
    }
    http.max_retries = field_or<int>(spec, "max_retries", http.max_retries);
    http.backoff_initial_ms = field_or<int>(spec, "backoff_initial_ms", http.backoff_initial_ms);
    http.timeout_sec = field_or<int>(spec, "timeout_sec", http.timeout_sec);
    http.max_in_flight = field_or<int>(spec, "max_in_flight", http.max_in_flight);
    return std::make_shared<HttpBackend>(std::move(http));
  }
  fail(ErrorKind::ConfigError, "unknown backend kind '" + kind + "'");
}

SkillProfile parse_skills(const nlohmann::json& j, const std::string& peer_id) {
  SkillProfile profile = SkillProfile::uniform(field_or<double>(j, "default", 0.5));
  for (const auto& [key, value] : j.items()) {
    if (key == "default") continue;
    try {
      profile.set(category_from_string(key), value.get<double>());
    } catch (const Error&) {
      fail(ErrorKind::ConfigError, "peer '" + peer_id + "' has unknown skill category '" + key + "'");
    }
  }
  profile.validate();
  return profile;
}

MixtureSpec parse_mixture(const nlohmann::json& j) {
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "reference")) {
    return MixtureSpec::reference_default();
  }
  if (!j.is_object()) fail(ErrorKind::ConfigError, "\"mixture\" must be \"reference\" or an object");
  MixtureSpec spec;
  for (const auto& [key, value] : j.items()) {
    spec.weights[category_from_string(key)] = value.get<double>();
  }
  spec.validate();
  return spec;
}

void apply_overrides(nlohmann::json& root, const LoopOverrides& o) {
  if (o.seed) root["seed"] = *o.seed;
  if (o.output_dir) root["output_dir"] = *o.output_dir;
  if (o.iterations) root["iterations"] = *o.iterations;
  if (o.samples_per_member) root["samples_per_member"] = *o.samples_per_member;
  if (o.reward_threshold) root["curation"]["reward_threshold"] = *o.reward_threshold;
  if (o.margin) root["curation"]["margin"] = *o.margin;
  if (o.aggregator) root["aggregator"]["strategy"] = *o.aggregator;
  if (o.scoring) root["scoring"]["mode"] = *o.scoring;
  if (o.mode) root["mode"] = *o.mode;
  if (o.objective) root["objective"] = *o.objective;
  if (o.threads) root["threads"] = *o.threads;
}

}  // namespace

std::string LoopConfig::config_hash() const {
  // Thread count affects scheduling only, never results, so it is not part of
  // the run's identity and resuming with a different count is legitimate.
  nlohmann::json canonical = effective;
  canonical.erase("threads");
  return hex64(fnv1a64(canonical.dump()));
}

void LoopConfig::validate() const {
  if (iterations < 1) fail(ErrorKind::ConfigError, "iterations must be >= 1");
  if (queries_per_iteration < 1) fail(ErrorKind::ConfigError, "queries_per_iteration must be >= 1");
  if (output_dir.empty()) fail(ErrorKind::ConfigError, "output_dir must not be empty");
  if (curation.reward_threshold < 0.0 || curation.reward_threshold > 1.0) {
    fail(ErrorKind::ConfigError, "reward_threshold must be in [0, 1]");
  }
  if (curation.margin < 0.0 || curation.margin > 1.0) {
    fail(ErrorKind::ConfigError, "margin must be in [0, 1]");
  }
  mixture.validate();
  if (kind == PanelKind::backend) {
    panel.validate();
    if (corpus_path.empty()) {
      fail(ErrorKind::ConfigError, "backend panels need a corpus_path");
    }
  } else {
    if (synthetic_peers.size() < 2) {
      fail(ErrorKind::ConfigError, "synthetic panels need at least 2 peers");
    }
    for (const SyntheticPeer& peer : synthetic_peers) peer.skills.validate();
    if (eta < 0.0 || eta > 1.0) fail(ErrorKind::ConfigError, "eta must be in [0, 1]");
  }
}

LoopConfig parse_loop_config(nlohmann::json root, const LoopOverrides& overrides) {
  if (!root.is_object()) fail(ErrorKind::ConfigError, "config root must be a JSON object");
  apply_overrides(root, overrides);

  LoopConfig config;
  config.effective = root;
  config.seed = field_or<uint64_t>(root, "seed", 1);
  config.output_dir = field_or<std::string>(root, "output_dir", "run");
  config.iterations = field_or<int>(root, "iterations", 3);
  config.queries_per_iteration = field_or<size_t>(root, "queries_per_iteration", 32);
  config.threads = field_or<int>(root, "threads", 1);
  config.corpus_path = field_or<std::string>(root, "corpus_path", "");

  const std::string mode = field_or<std::string>(root, "mode", "mt");
  if (mode != "mt" && mode != "st") fail(ErrorKind::ConfigError, "\"mode\" must be \"mt\" or \"st\"");
  config.panel.mode = mode == "st" ? PanelMode::single_try : PanelMode::multi_try;
  config.panel.samples_per_member = field_or<int>(root, "samples_per_member", 15);
  config.panel.include_self_eval = field_or<bool>(root, "include_self_eval", true);
  config.panel.temperature = field_or<double>(root, "temperature", 0.7);
  config.panel.judge_temperature = field_or<double>(root, "judge_temperature", 0.0);
  config.panel.max_tokens = field_or<int>(root, "max_tokens", 1024);
  config.panel.seed = config.seed;
  const std::string policy = field_or<std::string>(root, "on_partial_failure", "drop");
  if (policy != "drop" && policy != "abort") {
    fail(ErrorKind::ConfigError, "\"on_partial_failure\" must be \"drop\" or \"abort\"");
  }
  config.panel.on_partial_failure =
      policy == "abort" ? FailurePolicy::abort : FailurePolicy::drop;

  if (root.contains("scoring")) {
    const nlohmann::json& scoring = root.at("scoring");
    const std::string scoring_mode = field_or<std::string>(scoring, "mode", "absolute");
    if (scoring_mode == "absolute") {
      config.judging.scoring_mode = ScoringMode::absolute;
    } else if (scoring_mode == "relative") {
      config.judging.scoring_mode = ScoringMode::relative;
    } else {
      fail(ErrorKind::ConfigError, "\"scoring.mode\" must be \"absolute\" or \"relative\"");
    }
    const std::string output = field_or<std::string>(scoring, "relative_output", "ranking");
    if (output == "ranking") {
      config.judging.relative_output = RelativeOutput::ranking;
    } else if (output == "scores") {
      config.judging.relative_output = RelativeOutput::scores;
    } else {
      fail(ErrorKind::ConfigError, "\"scoring.relative_output\" must be \"ranking\" or \"scores\"");
    }
    config.judging.context_budget_chars =
        field_or<size_t>(scoring, "context_budget_chars", config.judging.context_budget_chars);
  }
  config.judging.include_self_eval = config.panel.include_self_eval;
  config.judging.temperature = config.panel.judge_temperature;
  config.judging.max_tokens = field_or<int>(root, "judge_max_tokens", 512);

  const std::string objective = field_or<std::string>(root, "objective", "simpo");
  if (objective == "simpo") {
    config.objective = Objective::simpo;
  } else if (objective == "sft") {
    config.objective = Objective::sft;
  } else {
    fail(ErrorKind::ConfigError, "\"objective\" must be \"simpo\" or \"sft\"");
  }
  if (root.contains("simpo")) {
    config.simpo.beta = field_or<double>(root.at("simpo"), "beta", config.simpo.beta);
    config.simpo.gamma = field_or<double>(root.at("simpo"), "gamma", config.simpo.gamma);
  }
  if (root.contains("train")) {
    const nlohmann::json& train = root.at("train");
    config.train_vocab = field_or<int>(train, "vocab", config.train_vocab);
    config.train_order = field_or<int>(train, "order", config.train_order);
    config.train_steps = field_or<int>(train, "steps", config.train_steps);
    config.train_step_size = field_or<double>(train, "step_size", config.train_step_size);
  }

  if (root.contains("aggregator")) {
    const nlohmann::json& aggregator = root.at("aggregator");
    config.aggregator.strategy =
        aggregation_from_string(field_or<std::string>(aggregator, "strategy", "mean"));
    config.aggregator.lambda = field_or<double>(aggregator, "lambda", 1.0);
    config.aggregator.exclude_self_eval = field_or<bool>(aggregator, "exclude_self_eval", false);
  }

  if (root.contains("curation")) {
    const nlohmann::json& curation = root.at("curation");
    config.curation.reward_threshold =
        field_or<double>(curation, "reward_threshold", config.curation.reward_threshold);
    config.curation.margin = field_or<double>(curation, "margin", config.curation.margin);
    config.curation.target_size =
        field_or<size_t>(curation, "target_size", config.curation.target_size);
  }
  config.curation.aggregator = config.aggregator;

  config.mixture = parse_mixture(root.contains("mixture") ? root.at("mixture") : nlohmann::json());

  const bool has_panel = root.contains("panel");
  const bool has_synthetic = root.contains("synthetic");
  if (has_panel == has_synthetic) {
    fail(ErrorKind::ConfigError, "config needs exactly one of \"panel\" or \"synthetic\"");
  }

  bool live_backend = false;
  if (has_panel) {
    config.kind = PanelKind::backend;
    const nlohmann::json& panel = root.at("panel");
    if (!panel.contains("members") || !panel.at("members").is_array()) {
      fail(ErrorKind::ConfigError, "\"panel.members\" must be an array");
    }
    for (const nlohmann::json& member : panel.at("members")) {
      PeerHandle handle;
      handle.id = member.at("id").get<std::string>();
      handle.can_generate = field_or<bool>(member, "can_generate", true);
      handle.can_judge = field_or<bool>(member, "can_judge", true);
      if (!member.contains("backend")) {
        fail(ErrorKind::ConfigError, "member '" + handle.id + "' has no backend");
      }
      if (member.at("backend").value("kind", "") == "http") live_backend = true;
      auto backend = build_backend(member.at("backend"), handle.id);
      config.owned_backends.push_back(backend);
      handle.backend = backend;
      config.panel.members.push_back(std::move(handle));
    }
  } else {
    config.kind = PanelKind::synthetic;
    const nlohmann::json& synthetic = root.at("synthetic");
    if (!synthetic.contains("peers") || !synthetic.at("peers").is_array()) {
      fail(ErrorKind::ConfigError, "\"synthetic.peers\" must be an array");
    }
    for (const nlohmann::json& peer_json : synthetic.at("peers")) {
      SyntheticPeer peer;
      peer.id = peer_json.at("id").get<std::string>();
      peer.skills = parse_skills(peer_json.value("skills", nlohmann::json::object()), peer.id);
      peer.gen_noise = field_or<double>(peer_json, "gen_noise", 0.1);
      peer.judge_noise = field_or<double>(peer_json, "judge_noise", 0.1);
      config.synthetic_peers.push_back(std::move(peer));
    }
    config.eta = field_or<double>(synthetic, "eta", 0.5);
    config.corpus_per_category = field_or<double>(synthetic, "corpus_per_category", 64);
  }

  // Logical clocks keep reruns byte-identical; pointless the moment a live
  // endpoint introduces real nondeterminism.
  config.deterministic_timestamps =
      field_or<bool>(root, "deterministic_timestamps", !live_backend);

  config.validate();
  return config;
}

LoopConfig load_loop_config(const std::string& path, const LoopOverrides& overrides) {
  return parse_loop_config(read_json_file(path), overrides);
}

// ============================================================================
// Manifests
// ============================================================================

size_t IterationCounts::rejected_total() const {
  size_t total = 0;
  for (const auto& [reason, count] : pairs_rejected) total += count;
  return total;
}

bool IterationCounts::reconciled() const { return pairs_accepted + rejected_total() == pools; }

nlohmann::json IterationManifest::to_json() const {
  nlohmann::json counts_json{
      {"queries", counts.queries},
      {"candidates", counts.candidates},
      {"generation_failures", counts.generation_failures},
      {"votes", counts.votes},
      {"dropped_votes", counts.dropped_votes},
      {"pools", counts.pools},
      {"pairs_accepted", counts.pairs_accepted},
      {"pairs_rejected", counts.pairs_rejected},
      {"sft_records", counts.sft_records},
      {"mixture_replacement", counts.mixture_replacement},
  };
  nlohmann::json j{
      {"iteration", iteration},
      {"config_hash", config_hash},
      {"corpus_hash", corpus_hash},
      {"counts", std::move(counts_json)},
      {"dataset_path", dataset_path},
      {"started", started},
      {"finished", finished},
      {"status", status},
  };
  if (!error.empty()) j["error"] = error;
  return j;
}

IterationManifest IterationManifest::from_json(const nlohmann::json& j) {
  IterationManifest m;
  m.iteration = j.at("iteration").get<int>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.corpus_hash = j.at("corpus_hash").get<std::string>();
  m.dataset_path = j.at("dataset_path").get<std::string>();
  m.started = j.at("started").get<std::string>();
  m.finished = j.at("finished").get<std::string>();
  m.status = j.at("status").get<std::string>();
  m.error = j.value("error", "");
  const nlohmann::json& counts = j.at("counts");
  m.counts.queries = counts.at("queries").get<size_t>();
  m.counts.candidates = counts.at("candidates").get<size_t>();
  m.counts.generation_failures = counts.at("generation_failures").get<size_t>();
  m.counts.votes = counts.at("votes").get<size_t>();
  m.counts.dropped_votes = counts.at("dropped_votes").get<size_t>();
  m.counts.pools = counts.at("pools").get<size_t>();
  m.counts.pairs_accepted = counts.at("pairs_accepted").get<size_t>();
  m.counts.sft_records = counts.at("sft_records").get<size_t>();
  m.counts.mixture_replacement = counts.at("mixture_replacement").get<bool>();
  for (const auto& [reason, count] : counts.at("pairs_rejected").items()) {
    m.counts.pairs_rejected[reason] = count.get<size_t>();
  }
  return m;
}

// ============================================================================
// Panel state
// ============================================================================

nlohmann::json PanelState::to_json() const {
  nlohmann::json j;
  j["peers"] = nlohmann::json::array();
  for (const SyntheticPeer& peer : peers) {
    nlohmann::json skills;
    for (Category c : kAllCategories) skills[to_string(c)] = peer.skills.get(c);
    j["peers"].push_back({{"id", peer.id},
                          {"skills", std::move(skills)},
                          {"gen_noise", peer.gen_noise},
                          {"judge_noise", peer.judge_noise}});
  }
  if (model) {
    j["model"] = {{"vocab", model->vocab_size()},
                  {"order", model->order()},
                  {"logits", model->logits()}};
  }
  j["loss_trace"] = loss_trace;
  return j;
}

PanelState PanelState::from_json(const nlohmann::json& j) {
  PanelState state;
  for (const nlohmann::json& peer_json : j.value("peers", nlohmann::json::array())) {
    SyntheticPeer peer;
    peer.id = peer_json.at("id").get<std::string>();
    for (Category c : kAllCategories) {
      peer.skills.set(c, peer_json.at("skills").at(to_string(c)).get<double>());
    }
    peer.gen_noise = peer_json.at("gen_noise").get<double>();
    peer.judge_noise = peer_json.at("judge_noise").get<double>();
    state.peers.push_back(std::move(peer));
  }
  if (j.contains("model")) {
    const nlohmann::json& model_json = j.at("model");
    TableLogProbModel model(model_json.at("vocab").get<int>(), model_json.at("order").get<int>());
    std::vector<double> logits = model_json.at("logits").get<std::vector<double>>();
    if (logits.size() != model.param_count()) {
      fail(ErrorKind::SchemaViolation, "model state has " + std::to_string(logits.size()) +
                                           " logits, expected " +
                                           std::to_string(model.param_count()));
    }
    model.logits() = std::move(logits);
    state.model = std::move(model);
  }
  state.loss_trace = j.value("loss_trace", std::vector<double>{});
  return state;
}

PanelState initial_state(const LoopConfig& config) {
  PanelState state;
  if (config.kind == PanelKind::synthetic) {
    state.peers = config.synthetic_peers;
  } else {
    state.model = TableLogProbModel::random(config.train_vocab, config.train_order,
                                            derive_seed(config.seed, "init-model"), 0.5);
  }
  return state;
}

// ============================================================================
// Iteration driver
// ============================================================================

namespace {

std::string iso8601(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

std::string iteration_dir(const LoopConfig& config, int t) {
  return config.output_dir + "/iter-" + std::to_string(t);
}

nlohmann::json verdict_to_json(const RelativeVerdict& verdict) {
  nlohmann::json j{{"judge_id", verdict.judge_id}};
  if (verdict.has_ranking()) {
    j["ranking"] = verdict.ranking;
  } else {
    nlohmann::json scores;
    for (const auto& [id, score] : verdict.scores) scores[id] = score;
    j["scores"] = std::move(scores);
  }
  return j;
}

// Latent-quality feedback for the synthetic learning step: one signal per
// accepted pool, carrying the chosen entry's hidden quality.
std::vector<CuratedSignal> collect_signals(const std::vector<SyntheticQueryResult>& results,
                                           std::span<const Query> queries,
                                           const LoopConfig& config) {
  std::vector<CuratedSignal> signals;
  for (size_t i = 0; i < results.size(); ++i) {
    const SyntheticQueryResult& result = results[i];
    if (config.objective == Objective::simpo) {
      if (result.outcome.accepted()) {
        signals.push_back({queries[i].category, result.chosen_latent});
      }
    } else {
      if (!result.pool.entries.empty() &&
          best_of_n(result.pool).reward.value >= config.curation.reward_threshold) {
        signals.push_back({queries[i].category, result.best_latent});
      }
    }
  }
  return signals;
}

ObjectiveBatch tokenize_dataset(const PreferenceDataset& pairs,
                                std::span<const SftRecord> records, const LoopConfig& config) {
  ObjectiveBatch batch;
  batch.objective = config.objective;
  if (config.objective == Objective::simpo) {
    for (const PreferencePair& pair : pairs.pairs) {
      TokenPair tokens;
      tokens.prompt = tokenize(pair.prompt, config.train_vocab);
      tokens.chosen = tokenize(pair.chosen, config.train_vocab);
      tokens.rejected = tokenize(pair.rejected, config.train_vocab);
      if (tokens.chosen.empty() || tokens.rejected.empty()) continue;
      batch.pairs.push_back(std::move(tokens));
    }
  } else {
    for (const SftRecord& record : records) {
      SftTokenRecord tokens;
      tokens.prompt = tokenize(record.prompt, config.train_vocab);
      tokens.target = tokenize(record.target, config.train_vocab);
      if (tokens.target.empty()) continue;
      batch.records.push_back(std::move(tokens));
    }
  }
  return batch;
}

}  // namespace

IterationOutputs run_iteration(const LoopConfig& config, int t, std::vector<Query>& corpus,
                               PanelState& state) {
  const std::string dir = iteration_dir(config, t);
  ensure_directory(dir);

  IterationOutputs out;
  IterationManifest& manifest = out.manifest;
  manifest.iteration = t;
  manifest.config_hash = config.config_hash();
  manifest.status = "completed";
  manifest.started = config.deterministic_timestamps
                         ? iso8601(static_cast<std::time_t>(2 * t - 2))
                         : iso8601(std::time(nullptr));

  try {
    const MixtureSampleResult sampled =
        sample_mixture(corpus, config.mixture, config.queries_per_iteration,
                       derive_seed(config.seed, {"mixture", std::to_string(t)}));
    write_query_corpus(sampled.queries, dir + "/queries.jsonl");
    manifest.counts.queries = sampled.queries.size();
    manifest.counts.mixture_replacement = sampled.replacement_used;

    std::map<std::string, Query> queries_by_id;
    for (const Query& query : sampled.queries) queries_by_id.emplace(query.id, query);

    std::vector<CandidatePool> pools;
    PreferenceDataset pairs;
    std::vector<SftRecord> sft_records;
    CurationStats stats;

    if (config.kind == PanelKind::synthetic) {
      SyntheticPanelConfig panel;
      panel.peers = state.peers;
      panel.samples_per_member = config.panel.effective_samples();
      panel.include_self_eval = config.panel.include_self_eval;
      panel.aggregator = config.aggregator;

      const std::vector<SyntheticQueryResult> results =
          config.threads == 1
              ? run_synthetic_queries_serial(panel, sampled.queries, config.curation, t,
                                             config.seed)
              : run_synthetic_queries_parallel(panel, sampled.queries, config.curation, t,
                                               config.seed, config.threads);

      std::vector<Candidate> candidates;
      std::vector<ScoreRecord> scores;
      std::vector<AggregatedReward> rewards;
      for (const SyntheticQueryResult& result : results) {
        for (const PoolEntry& entry : result.pool.entries) {
          candidates.push_back(entry.candidate);
          rewards.push_back(entry.reward);
        }
        scores.insert(scores.end(), result.scores.begin(), result.scores.end());
        pools.push_back(result.pool);
      }
      manifest.counts.candidates = candidates.size();
      manifest.counts.votes = scores.size();
      write_candidates_jsonl(dir + "/candidates.jsonl", candidates);
      write_scores_jsonl(dir + "/scores.jsonl", scores);
      write_rewards_jsonl(dir + "/rewards.jsonl", rewards);

      if (config.objective == Objective::simpo) {
        pairs = build_dataset(pools, config.curation, queries_by_id, t, &stats);
      } else {
        sft_records = build_sft_dataset(pools, config.curation, queries_by_id, &stats);
      }

      // Learning step: every peer trains on the same curated feedback.
      const std::vector<CuratedSignal> signals = collect_signals(results, sampled.queries, config);
      std::vector<SyntheticPeer> updated;
      updated.reserve(state.peers.size());
      for (const SyntheticPeer& peer : state.peers) {
        updated.push_back(apply_update(peer, signals, config.eta));
      }
      state.peers = std::move(updated);
    } else {
      PanelConfig panel = config.panel;
      panel.seed = derive_seed(config.seed, {"gen", std::to_string(t)});

      std::vector<Candidate> candidates;
      for (const Query& query : sampled.queries) {
        GenerationResult generated = generate_candidates(panel, query);
        manifest.counts.generation_failures += generated.failures.size();
        candidates.insert(candidates.end(), generated.candidates.begin(),
                          generated.candidates.end());
      }
      manifest.counts.candidates = candidates.size();
      write_candidates_jsonl(dir + "/candidates.jsonl", candidates);

      JudgeStageOptions judging = config.judging;
      judging.seed = derive_seed(config.seed, {"judge", std::to_string(t)});
      const JudgeStageResult judged =
          judge_all(panel.members, sampled.queries, candidates, judging, config.threads);
      manifest.counts.dropped_votes = judged.dropped_votes;

      std::set<std::string> voted;
      std::vector<AggregatedReward> rewards;
      if (judging.scoring_mode == ScoringMode::absolute) {
        manifest.counts.votes = judged.scores.size();
        write_scores_jsonl(dir + "/scores.jsonl", judged.scores);
        rewards = aggregate_stage(judged.scores, candidates, config.aggregator, &voted);
      } else {
        manifest.counts.votes = judged.verdicts.size();
        std::vector<nlohmann::json> verdict_lines;
        verdict_lines.reserve(judged.verdicts.size());
        for (const RelativeVerdict& verdict : judged.verdicts) {
          verdict_lines.push_back(verdict_to_json(verdict));
        }
        write_jsonl_file(dir + "/verdicts.jsonl", verdict_lines);
        rewards = aggregate_relative_stage(judged.verdicts, candidates, &voted);
      }
      write_rewards_jsonl(dir + "/rewards.jsonl", rewards);

      pools = pool_stage(sampled.queries, candidates, rewards, panel.mode, panel.member_order(),
                         &voted);

      if (config.objective == Objective::simpo) {
        pairs = build_dataset(pools, config.curation, queries_by_id, t, &stats);
      } else {
        sft_records = build_sft_dataset(pools, config.curation, queries_by_id, &stats);
      }

      // Learning step: fit the toy scoring model to the curated dataset.
      const ObjectiveBatch batch = tokenize_dataset(pairs, sft_records, config);
      if (batch.size() > 0 && state.model) {
        TrainResult trained = train_toy(*state.model, batch, config.simpo, config.train_steps,
                                        config.train_step_size, config.threads);
        state.model = std::move(trained.model);
        state.loss_trace.push_back(trained.loss_trace.back());
      }
    }

    manifest.counts.pools = stats.pools;
    manifest.counts.pairs_accepted = stats.accepted;
    for (const auto& [reason, count] : stats.rejected) {
      manifest.counts.pairs_rejected[to_string(reason)] = count;
    }
    if (config.objective == Objective::simpo) {
      manifest.dataset_path = dir + "/pairs.jsonl";
      write_jsonl(pairs, manifest.dataset_path);
    } else {
      manifest.counts.sft_records = sft_records.size();
      manifest.dataset_path = dir + "/sft.jsonl";
      write_jsonl(std::span<const SftRecord>(sft_records), manifest.dataset_path);
    }
    manifest.corpus_hash = file_hash(dir + "/queries.jsonl");
    out.stats = std::move(stats);
  } catch (const Error& e) {
    manifest.status = "failed";
    manifest.error = e.what();
    manifest.finished = config.deterministic_timestamps
                            ? iso8601(static_cast<std::time_t>(2 * t - 1))
                            : iso8601(std::time(nullptr));
    write_json_file(dir + "/manifest.json", manifest.to_json());
    throw;
  }

  manifest.finished = config.deterministic_timestamps
                          ? iso8601(static_cast<std::time_t>(2 * t - 1))
                          : iso8601(std::time(nullptr));
  if (!manifest.counts.reconciled()) {
    fail(ErrorKind::SchemaViolation,
         "iteration " + std::to_string(t) + " counts do not reconcile: accepted " +
             std::to_string(manifest.counts.pairs_accepted) + " + rejected " +
             std::to_string(manifest.counts.rejected_total()) + " != pools " +
             std::to_string(manifest.counts.pools));
  }
  // Commit order matters for resume: manifest first, then the state snapshot.
  // A kill between the two reruns this iteration from the previous state and
  // regenerates identical artifacts.
  write_json_file(dir + "/manifest.json", manifest.to_json());
  write_json_file(dir + "/state.json", state.to_json());
  return out;
}

// ============================================================================
// Loop with resume
// ============================================================================

namespace {

std::vector<Query> resolve_corpus(const LoopConfig& config) {
  if (!config.corpus_path.empty()) return read_query_corpus(config.corpus_path);
  return make_synthetic_corpus(static_cast<size_t>(config.corpus_per_category),
                               derive_seed(config.seed, "corpus"));
}

// A finished iteration is one whose manifest parses, reports completed status
// under the same config hash, reconciles, and has a state snapshot next to it.
bool iteration_complete(const LoopConfig& config, int t, IterationManifest* manifest_out) {
  const std::string dir = iteration_dir(config, t);
  if (!file_exists(dir + "/manifest.json") || !file_exists(dir + "/state.json")) return false;
  IterationManifest manifest;
  try {
    manifest = IterationManifest::from_json(read_json_file(dir + "/manifest.json"));
  } catch (const std::exception&) {
    return false;  // partial write; rerun the iteration
  }
  if (manifest.status != "completed" || !manifest.counts.reconciled()) return false;
  if (manifest.config_hash != config.config_hash()) {
    fail(ErrorKind::ConfigDrift,
         "iter-" + std::to_string(t) + " was produced under config " + manifest.config_hash +
             " but this run is " + config.config_hash() +
             "; use a fresh output_dir or restore the original config");
  }
  if (manifest_out) *manifest_out = manifest;
  return true;
}

}  // namespace

LoopReport run_loop(const LoopConfig& config) {
  config.validate();
  ensure_directory(config.output_dir);
  write_json_file(config.output_dir + "/config.json", config.effective);

  std::vector<Query> corpus = resolve_corpus(config);

  // Longest completed prefix: everything after it is (re)run.
  int resume_from = 0;
  std::vector<IterationManifest> manifests;
  for (int t = 1; t <= config.iterations; ++t) {
    IterationManifest manifest;
    if (!iteration_complete(config, t, &manifest)) break;
    manifests.push_back(std::move(manifest));
    resume_from = t;
  }

  PanelState state =
      resume_from == 0
          ? initial_state(config)
          : PanelState::from_json(
                read_json_file(iteration_dir(config, resume_from) + "/state.json"));

  for (int t = resume_from + 1; t <= config.iterations; ++t) {
    IterationOutputs outputs = run_iteration(config, t, corpus, state);
    manifests.push_back(std::move(outputs.manifest));
  }

  LoopReport report;
  report.manifests = std::move(manifests);
  report.final_state = std::move(state);
  return report;
}

}  // namespace pop
