// Command-line surface for the panel-of-peers preference data engine.
//
// Every command prints a machine-readable JSON summary on stdout and exits 0
// on success; failures print {"error": {kind, message}} and exit nonzero.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pop/io.hpp"
#include "pop/orchestrator.hpp"
#include "pop/rng.hpp"

namespace {

using nlohmann::json;

struct StagePaths {
  std::string queries;
  std::string candidates;
  std::string scores;
  std::string verdicts;
  std::string rewards;
  std::string pairs;
  std::string sft;
  std::string csv;
  int iteration = 1;
  int fd_coords = 200;
};

pop::LoopConfig load_config(const std::string& path, const pop::LoopOverrides& overrides) {
  if (path.empty()) pop::fail(pop::ErrorKind::ConfigError, "--config is required");
  return pop::load_loop_config(path, overrides);
}

void require_backend_panel(const pop::LoopConfig& config, const char* command) {
  if (config.kind != pop::PanelKind::backend) {
    pop::fail(pop::ErrorKind::ConfigError,
              std::string("'") + command +
                  "' needs a backend panel; synthetic panels run via 'simulate' or 'loop'");
  }
}

std::vector<pop::RelativeVerdict> read_verdicts(const std::string& path) {
  std::vector<pop::RelativeVerdict> verdicts;
  for (const json& line : pop::read_jsonl_file(path)) {
    pop::RelativeVerdict verdict;
    verdict.judge_id = line.at("judge_id").get<std::string>();
    if (line.contains("ranking")) {
      verdict.ranking = line.at("ranking").get<std::vector<std::string>>();
    } else if (line.contains("scores")) {
      for (const auto& [id, score] : line.at("scores").items()) {
        verdict.scores.emplace_back(id, score.get<double>());
      }
    } else {
      pop::fail(pop::ErrorKind::SchemaViolation,
                path + ": verdict lacks \"ranking\" and \"scores\"");
    }
    verdicts.push_back(std::move(verdict));
  }
  return verdicts;
}

json stats_to_json(const pop::CurationStats& stats) {
  json rejected = json::object();
  for (const auto& [reason, count] : stats.rejected) rejected[pop::to_string(reason)] = count;
  json by_category = json::object();
  for (const auto& [category, count] : stats.accepted_by_category) {
    by_category[pop::to_string(category)] = count;
  }
  return {{"pools", stats.pools},
          {"accepted", stats.accepted},
          {"surplus", stats.surplus},
          {"rejected", std::move(rejected)},
          {"accepted_by_category", std::move(by_category)}};
}

int cmd_generate(const pop::LoopConfig& config, const StagePaths& paths) {
  require_backend_panel(config, "generate");
  const std::vector<pop::Query> queries = pop::read_query_corpus(paths.queries);
  pop::ensure_directory(config.output_dir);

  std::vector<pop::Candidate> candidates;
  size_t failures = 0;
  pop::PanelConfig panel = config.panel;
  panel.seed = pop::derive_seed(config.seed, {"gen", std::to_string(paths.iteration)});
  for (const pop::Query& query : queries) {
    pop::GenerationResult result = pop::generate_candidates(panel, query);
    failures += result.failures.size();
    candidates.insert(candidates.end(), result.candidates.begin(), result.candidates.end());
  }
  const std::string out_path = config.output_dir + "/candidates.jsonl";
  pop::write_candidates_jsonl(out_path, candidates);

  std::cout << json{{"queries", queries.size()},
                    {"candidates", candidates.size()},
                    {"generation_failures", failures},
                    {"output", out_path}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_judge(const pop::LoopConfig& config, const StagePaths& paths) {
  require_backend_panel(config, "judge");
  const std::vector<pop::Query> queries = pop::read_query_corpus(paths.queries);
  const std::vector<pop::Candidate> candidates = pop::read_candidates_jsonl(paths.candidates);
  pop::ensure_directory(config.output_dir);

  pop::JudgeStageOptions options = config.judging;
  options.seed = pop::derive_seed(config.seed, {"judge", std::to_string(paths.iteration)});
  const pop::JudgeStageResult result =
      pop::judge_all(config.panel.members, queries, candidates, options, config.threads);

  json summary{{"dropped_votes", result.dropped_votes}};
  if (options.scoring_mode == pop::ScoringMode::absolute) {
    const std::string out_path = config.output_dir + "/scores.jsonl";
    pop::write_scores_jsonl(out_path, result.scores);
    summary["votes"] = result.scores.size();
    summary["output"] = out_path;
  } else {
    std::vector<json> lines;
    for (const pop::RelativeVerdict& verdict : result.verdicts) {
      json line{{"judge_id", verdict.judge_id}};
      if (verdict.has_ranking()) {
        line["ranking"] = verdict.ranking;
      } else {
        json scores = json::object();
        for (const auto& [id, score] : verdict.scores) scores[id] = score;
        line["scores"] = std::move(scores);
      }
      lines.push_back(std::move(line));
    }
    const std::string out_path = config.output_dir + "/verdicts.jsonl";
    pop::write_jsonl_file(out_path, lines);
    summary["votes"] = result.verdicts.size();
    summary["output"] = out_path;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_aggregate(const pop::LoopConfig& config, const StagePaths& paths) {
  const std::vector<pop::Candidate> candidates = pop::read_candidates_jsonl(paths.candidates);
  pop::ensure_directory(config.output_dir);

  std::vector<pop::AggregatedReward> rewards;
  if (!paths.verdicts.empty()) {
    rewards = pop::aggregate_relative_stage(read_verdicts(paths.verdicts), candidates);
  } else if (!paths.scores.empty()) {
    rewards = pop::aggregate_stage(pop::read_scores_jsonl(paths.scores), candidates,
                                   config.aggregator);
  } else {
    pop::fail(pop::ErrorKind::ConfigError, "'aggregate' needs --scores or --verdicts");
  }
  const std::string out_path = config.output_dir + "/rewards.jsonl";
  pop::write_rewards_jsonl(out_path, rewards);
  std::cout << json{{"candidates", candidates.size()},
                    {"rewards", rewards.size()},
                    {"strategy", pop::to_string(config.aggregator.strategy)},
                    {"output", out_path}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_curate(const pop::LoopConfig& config, const StagePaths& paths) {
  const std::vector<pop::Query> queries = pop::read_query_corpus(paths.queries);
  const std::vector<pop::Candidate> candidates = pop::read_candidates_jsonl(paths.candidates);
  const std::vector<pop::AggregatedReward> rewards = pop::read_rewards_jsonl(paths.rewards);
  pop::ensure_directory(config.output_dir);

  std::map<std::string, pop::Query> queries_by_id;
  std::map<pop::PeerId, int> member_order;
  for (const pop::Query& query : queries) queries_by_id.emplace(query.id, query);
  for (const pop::Candidate& candidate : candidates) {
    member_order.emplace(candidate.peer_id, static_cast<int>(member_order.size()));
  }

  const std::vector<pop::CandidatePool> pools =
      pop::pool_stage(queries, candidates, rewards, config.panel.mode, member_order);

  pop::CurationStats stats;
  json summary;
  if (config.objective == pop::Objective::simpo) {
    const pop::PreferenceDataset dataset =
        pop::build_dataset(pools, config.curation, queries_by_id, paths.iteration, &stats);
    const std::string out_path = config.output_dir + "/pairs.jsonl";
    pop::write_jsonl(dataset, out_path);
    summary["pairs"] = dataset.pairs.size();
    summary["output"] = out_path;
  } else {
    const std::vector<pop::SftRecord> records =
        pop::build_sft_dataset(pools, config.curation, queries_by_id, &stats);
    const std::string out_path = config.output_dir + "/sft.jsonl";
    pop::write_jsonl(records, out_path);
    summary["sft_records"] = records.size();
    summary["output"] = out_path;
  }
  summary["stats"] = stats_to_json(stats);
  std::cout << summary.dump() << "\n";
  return 0;
}

// Loads a curated dataset, lifts it into the toy vocabulary, and reports the
// loss plus an analytic-vs-finite-difference gradient comparison.
int cmd_loss_check(const pop::LoopConfig& config, const StagePaths& paths) {
  pop::ObjectiveBatch batch;
  batch.objective = config.objective;
  if (config.objective == pop::Objective::simpo) {
    if (paths.pairs.empty()) {
      pop::fail(pop::ErrorKind::ConfigError, "'loss-check' with the simpo objective needs --pairs");
    }
    const pop::PreferenceDataset dataset = pop::read_pairs_jsonl(paths.pairs);
    for (const pop::PreferencePair& pair : dataset.pairs) {
      pop::TokenPair tokens;
      tokens.prompt = pop::tokenize(pair.prompt, config.train_vocab);
      tokens.chosen = pop::tokenize(pair.chosen, config.train_vocab);
      tokens.rejected = pop::tokenize(pair.rejected, config.train_vocab);
      if (tokens.chosen.empty() || tokens.rejected.empty()) continue;
      batch.pairs.push_back(std::move(tokens));
    }
  } else {
    if (paths.sft.empty()) {
      pop::fail(pop::ErrorKind::ConfigError, "'loss-check' with the sft objective needs --sft");
    }
    for (const pop::SftRecord& record : pop::read_sft_jsonl(paths.sft)) {
      pop::SftTokenRecord tokens;
      tokens.prompt = pop::tokenize(record.prompt, config.train_vocab);
      tokens.target = pop::tokenize(record.target, config.train_vocab);
      if (tokens.target.empty()) continue;
      batch.records.push_back(std::move(tokens));
    }
  }
  if (batch.size() == 0) {
    pop::fail(pop::ErrorKind::ConfigError, "dataset produced no usable records");
  }

  pop::TableLogProbModel model = pop::TableLogProbModel::random(
      config.train_vocab, config.train_order, pop::derive_seed(config.seed, "loss-check"), 0.5);
  const double loss = pop::batch_loss_parallel(model, batch, config.simpo, config.threads);
  const std::vector<double> analytic =
      pop::batch_gradient_parallel(model, batch, config.simpo, config.threads);

  // Central finite differences over a deterministic coordinate subset; the
  // error metric is scaled by the gradient magnitude so near-zero entries do
  // not blow it up.
  const double epsilon = 1e-5;
  const size_t coords = std::min(analytic.size(), static_cast<size_t>(paths.fd_coords));
  pop::Rng picker(pop::derive_seed(config.seed, "fd-coords"));
  double max_abs_err = 0.0;
  double inf_norm = 0.0;
  for (double g : analytic) inf_norm = std::max(inf_norm, std::abs(g));
  for (size_t k = 0; k < coords; ++k) {
    const size_t i = static_cast<size_t>(picker.uniform_index(analytic.size()));
    const double saved = model.logits()[i];
    model.logits()[i] = saved + epsilon;
    const double up = pop::batch_loss_serial(model, batch, config.simpo);
    model.logits()[i] = saved - epsilon;
    const double down = pop::batch_loss_serial(model, batch, config.simpo);
    model.logits()[i] = saved;
    const double fd = (up - down) / (2.0 * epsilon);
    max_abs_err = std::max(max_abs_err, std::abs(analytic[i] - fd));
  }
  const double metric = max_abs_err / std::max(inf_norm, 1e-12);

  std::cout << json{{"objective", pop::to_string(config.objective)},
                    {"pairs", batch.size()},
                    {"mean_loss", loss},
                    {"grad_checked_coords", coords},
                    {"grad_max_rel_err", metric},
                    {"params", model.param_count()}}
                   .dump()
            << "\n";
  return 0;
}

json skills_to_json(const pop::SkillProfile& skills) {
  json j = json::object();
  for (pop::Category c : pop::kAllCategories) j[pop::to_string(c)] = skills.get(c);
  return j;
}

int cmd_simulate_transfer(const pop::LoopConfig& config, const StagePaths& paths) {
  if (config.kind != pop::PanelKind::synthetic) {
    pop::fail(pop::ErrorKind::ConfigError, "'simulate' needs a \"synthetic\" config section");
  }
  pop::TransferConfig transfer;
  transfer.peers = config.synthetic_peers;
  transfer.mixture = config.mixture;
  transfer.curation = config.curation;
  transfer.iterations = config.iterations;
  transfer.queries_per_iteration = config.queries_per_iteration;
  transfer.samples_per_member = config.panel.effective_samples();
  transfer.include_self_eval = config.panel.include_self_eval;
  transfer.eta = config.eta;
  transfer.seed = config.seed;
  transfer.corpus_per_category = static_cast<size_t>(config.corpus_per_category);
  transfer.threads = config.threads;

  const pop::TransferReport report = pop::run_transfer_experiment(transfer);

  json skills_json = json::array();
  for (const auto& snapshot : report.per_iteration_skills) {
    json per_peer = json::object();
    for (size_t p = 0; p < snapshot.size(); ++p) {
      per_peer[report.peer_ids[p]] = skills_to_json(snapshot[p]);
    }
    skills_json.push_back(std::move(per_peer));
  }
  json stats_json = json::array();
  for (const pop::CurationStats& stats : report.per_iteration_stats) {
    stats_json.push_back(stats_to_json(stats));
  }

  if (!paths.csv.empty()) {
    std::string csv = "iteration,peer,category,skill\n";
    for (size_t t = 0; t < report.per_iteration_skills.size(); ++t) {
      for (size_t p = 0; p < report.per_iteration_skills[t].size(); ++p) {
        for (pop::Category c : pop::kAllCategories) {
          csv += std::to_string(t) + "," + report.peer_ids[p] + "," + pop::to_string(c) + "," +
                 std::to_string(report.per_iteration_skills[t][p].get(c)) + "\n";
        }
      }
    }
    pop::write_text_file(paths.csv, csv);
  }

  std::cout << json{{"config_hash", report.config_hash},
                    {"peer_ids", report.peer_ids},
                    {"per_iteration_skills", std::move(skills_json)},
                    {"per_iteration_dataset_stats", std::move(stats_json)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_simulate_panel_vs_single(const pop::LoopConfig& config) {
  if (config.kind != pop::PanelKind::synthetic) {
    pop::fail(pop::ErrorKind::ConfigError, "'simulate' needs a \"synthetic\" config section");
  }
  pop::PanelVsSingleConfig pvs;
  pvs.peers = config.synthetic_peers;
  pvs.n_queries = config.queries_per_iteration;
  pvs.samples_per_member = config.panel.effective_samples();
  pvs.seed = config.seed;
  pvs.threads = config.threads;

  const pop::PanelVsSingleResult result = pop::run_panel_vs_single(pvs);
  std::cout << json{{"panel_selection_quality", result.panel_selection_quality},
                    {"mean_single_judge_quality", result.mean_single_judge_quality},
                    {"panel_advantage",
                     result.panel_selection_quality - result.mean_single_judge_quality}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_loop(const pop::LoopConfig& config) {
  const pop::LoopReport report = pop::run_loop(config);
  json iterations = json::array();
  for (const pop::IterationManifest& manifest : report.manifests) {
    iterations.push_back({{"iteration", manifest.iteration},
                          {"status", manifest.status},
                          {"queries", manifest.counts.queries},
                          {"candidates", manifest.counts.candidates},
                          {"pairs_accepted", manifest.counts.pairs_accepted},
                          {"dataset_path", manifest.dataset_path}});
  }
  std::cout << json{{"config_hash", config.config_hash()},
                    {"output_dir", config.output_dir},
                    {"iterations", std::move(iterations)}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panel-of-peers preference data engine"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  StagePaths paths;
  pop::LoopOverrides overrides;
  uint64_t seed = 0;
  std::string output_dir;
  int iterations = 0;
  size_t samples = 0;
  double reward_threshold = 0.0;
  double margin = 0.0;
  std::string aggregator, scoring, mode, objective;
  int threads = 0;

  app.add_option("--config", config_path, "Config file (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed override");
  auto* output_opt = app.add_option("--output", output_dir, "Output directory override");
  auto* iter_opt = app.add_option("--iterations", iterations, "Iteration count override");
  auto* samples_opt =
      app.add_option("--samples-per-member", samples, "Samples per panel member override");
  auto* threshold_opt =
      app.add_option("--reward-threshold", reward_threshold, "Chosen-reward floor override");
  auto* margin_opt = app.add_option("--margin", margin, "Chosen-rejected margin override");
  auto* aggregator_opt = app.add_option("--aggregator", aggregator, "mean|min|uw");
  auto* scoring_opt = app.add_option("--scoring", scoring, "absolute|relative");
  auto* mode_opt = app.add_option("--mode", mode, "st|mt");
  auto* objective_opt = app.add_option("--objective", objective, "simpo|sft");
  auto* threads_opt = app.add_option("--threads", threads, "Worker thread override");

  CLI::App* generate = app.add_subcommand("generate", "Queries -> candidates");
  generate->add_option("--queries", paths.queries, "Query corpus JSONL")->required();
  generate->add_option("--iteration", paths.iteration, "Iteration index for seed derivation");

  CLI::App* judge = app.add_subcommand("judge", "Candidates -> score records");
  judge->add_option("--queries", paths.queries, "Query corpus JSONL")->required();
  judge->add_option("--candidates", paths.candidates, "Candidates JSONL")->required();
  judge->add_option("--iteration", paths.iteration, "Iteration index for seed derivation");

  CLI::App* aggregate = app.add_subcommand("aggregate", "Scores -> aggregated rewards");
  aggregate->add_option("--candidates", paths.candidates, "Candidates JSONL")->required();
  aggregate->add_option("--scores", paths.scores, "Score records JSONL");
  aggregate->add_option("--verdicts", paths.verdicts, "Relative verdicts JSONL");

  CLI::App* curate = app.add_subcommand("curate", "Pools -> preference/SFT dataset");
  curate->add_option("--queries", paths.queries, "Query corpus JSONL")->required();
  curate->add_option("--candidates", paths.candidates, "Candidates JSONL")->required();
  curate->add_option("--rewards", paths.rewards, "Aggregated rewards JSONL")->required();
  curate->add_option("--iteration", paths.iteration, "Iteration tag for emitted pairs");

  CLI::App* loss_check = app.add_subcommand("loss-check", "Dataset -> loss/gradient report");
  loss_check->add_option("--pairs", paths.pairs, "Preference pairs JSONL");
  loss_check->add_option("--sft", paths.sft, "SFT records JSONL");
  loss_check->add_option("--fd-coords", paths.fd_coords,
                         "Coordinates to probe with finite differences");

  CLI::App* simulate = app.add_subcommand("simulate", "Synthetic-panel experiments");
  simulate->require_subcommand(1);
  CLI::App* transfer = simulate->add_subcommand("transfer", "Knowledge-transfer loop");
  transfer->add_option("--csv", paths.csv, "Optional skill-trajectory CSV path");
  CLI::App* pvs = simulate->add_subcommand("panel-vs-single", "Panel vs single-judge selection");

  CLI::App* loop = app.add_subcommand("loop", "Full iterative run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << json{{"error", {{"kind", "UsageError"}, {"message", e.what()}}}}.dump() << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  if (*seed_opt) overrides.seed = seed;
  if (*output_opt) overrides.output_dir = output_dir;
  if (*iter_opt) overrides.iterations = iterations;
  if (*samples_opt) overrides.samples_per_member = samples;
  if (*threshold_opt) overrides.reward_threshold = reward_threshold;
  if (*margin_opt) overrides.margin = margin;
  if (*aggregator_opt) overrides.aggregator = aggregator;
  if (*scoring_opt) overrides.scoring = scoring;
  if (*mode_opt) overrides.mode = mode;
  if (*objective_opt) overrides.objective = objective;
  if (*threads_opt) overrides.threads = threads;

  try {
    const pop::LoopConfig config = load_config(config_path, overrides);
    if (generate->parsed()) return cmd_generate(config, paths);
    if (judge->parsed()) return cmd_judge(config, paths);
    if (aggregate->parsed()) return cmd_aggregate(config, paths);
    if (curate->parsed()) return cmd_curate(config, paths);
    if (loss_check->parsed()) return cmd_loss_check(config, paths);
    if (simulate->parsed()) {
      if (transfer->parsed()) return cmd_simulate_transfer(config, paths);
      if (pvs->parsed()) return cmd_simulate_panel_vs_single(config);
    }
    if (loop->parsed()) return cmd_loop(config);
    pop::fail(pop::ErrorKind::ConfigError, "no command selected");
  } catch (const pop::Error& e) {
    std::cout << json{{"error", {{"kind", pop::to_string(e.kind())}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cout << json{{"error", {{"kind", "InternalError"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
