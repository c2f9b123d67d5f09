#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pop/curation.hpp"
#include "pop/objectives.hpp"
#include "pop/panel.hpp"
#include "pop/pipeline.hpp"
#include "pop/simulator.hpp"

namespace pop {

// ============================================================================
// Loop configuration
// ============================================================================

enum class PanelKind { backend, synthetic };

struct LoopConfig {
  uint64_t seed = 1;
  std::string output_dir = "run";
  int iterations = 3;
  size_t queries_per_iteration = 32;
  int threads = 1;

  PanelKind kind = PanelKind::synthetic;

  // Backend panels.
  PanelConfig panel;
  std::vector<std::shared_ptr<GenerationBackend>> owned_backends;

  // Synthetic panels.
  std::vector<SyntheticPeer> synthetic_peers;
  double eta = 0.5;
  double corpus_per_category = 0;  // >0 generates a synthetic corpus of this size

  std::string corpus_path;  // query corpus JSONL; optional for synthetic panels

  MixtureSpec mixture;
  CurationConfig curation;
  AggregatorConfig aggregator;
  JudgeStageOptions judging;
  Objective objective = Objective::simpo;
  SimPOParams simpo;

  // Toy-model learning step for backend panels.
  int train_vocab = 24;
  int train_order = 1;
  int train_steps = 40;
  double train_step_size = 0.05;

  // Logical clocks keep manifests reproducible; disabled automatically when a
  // panel member talks to a live HTTP endpoint.
  bool deterministic_timestamps = true;

  // Canonical JSON the runtime config was built from, after CLI overrides.
  nlohmann::json effective;

  std::string config_hash() const;
  void validate() const;
};

// Values the CLI can pin over the config file. Unset fields leave the file
// value in place.
struct LoopOverrides {
  std::optional<uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<int> iterations;
  std::optional<size_t> samples_per_member;
  std::optional<double> reward_threshold;
  std::optional<double> margin;
  std::optional<std::string> aggregator;
  std::optional<std::string> scoring;
  std::optional<std::string> mode;
  std::optional<std::string> objective;
  std::optional<int> threads;
};

// Parses a config JSON object (already loaded) after applying overrides.
LoopConfig parse_loop_config(nlohmann::json root, const LoopOverrides& overrides);
LoopConfig load_loop_config(const std::string& path, const LoopOverrides& overrides);

// ============================================================================
// Iteration manifests
// ============================================================================

struct IterationCounts {
  size_t queries = 0;
  size_t candidates = 0;
  size_t generation_failures = 0;
  size_t votes = 0;
  size_t dropped_votes = 0;
  size_t pools = 0;
  size_t pairs_accepted = 0;
  std::map<std::string, size_t> pairs_rejected;
  size_t sft_records = 0;
  bool mixture_replacement = false;

  size_t rejected_total() const;
  // Every pool must be accounted for: accepted + rejected == pools.
  bool reconciled() const;
};

struct IterationManifest {
  int iteration = 0;
  std::string config_hash;
  std::string corpus_hash;
  IterationCounts counts;
  std::string dataset_path;
  std::string started;
  std::string finished;
  std::string status;  // "completed" | "failed"
  std::string error;

  nlohmann::json to_json() const;
  static IterationManifest from_json(const nlohmann::json& j);
};

// ============================================================================
// Panel state carried across iterations
// ============================================================================

struct PanelState {
  // Synthetic panels evolve per-category skills.
  std::vector<SyntheticPeer> peers;
  // Backend panels train a toy scoring model on each iteration's dataset.
  std::optional<TableLogProbModel> model;
  std::vector<double> loss_trace;  // final toy-training losses per iteration

  nlohmann::json to_json() const;
  static PanelState from_json(const nlohmann::json& j);
};

PanelState initial_state(const LoopConfig& config);

// ============================================================================
// Iteration driver
// ============================================================================

struct IterationOutputs {
  IterationManifest manifest;
  CurationStats stats;
};

// Runs iteration `t` (1-based): sample queries, generate, judge, aggregate,
// pool, curate, write artifacts under `<output_dir>/iter-<t>/`, apply the
// learning step to `state`.
IterationOutputs run_iteration(const LoopConfig& config, int t,
                               std::vector<Query>& corpus, PanelState& state);

struct LoopReport {
  std::vector<IterationManifest> manifests;
  PanelState final_state;
};

// Full loop with resume: iterations whose manifest is already on disk and
// reconciles against the same config hash are skipped; a hash mismatch throws
// Error(ConfigDrift).
LoopReport run_loop(const LoopConfig& config);

}  // namespace pop
