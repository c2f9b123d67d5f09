#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pop/common.hpp"

namespace pop {

// ============================================================================
// Task categories
// ============================================================================

enum class Category {
  Language,
  GeneralKnowledge,
  OCR,
  Counting,
  Math,
  Code,
  ScientificKnowledge,
};

constexpr int kCategoryCount = 7;

constexpr std::array<Category, kCategoryCount> kAllCategories = {
    Category::Language, Category::GeneralKnowledge, Category::OCR,     Category::Counting,
    Category::Math,     Category::Code,             Category::ScientificKnowledge,
};

const char* to_string(Category c);
Category category_from_string(std::string_view name);  // throws SchemaViolation

// ============================================================================
// Domain types
// ============================================================================

using PeerId = std::string;

struct Query {
  std::string id;
  std::string image_ref;  // file path, URL, or data: URI; empty when text-only
  std::string prompt;
  Category category = Category::Language;
};

struct Candidate {
  std::string id;
  std::string query_id;
  PeerId peer_id;
  std::string text;
  int sample_index = 0;
};

inline std::string make_candidate_id(const std::string& query_id, const PeerId& peer_id,
                                     int sample_index) {
  return query_id + "#" + peer_id + "#" + std::to_string(sample_index);
}

// ============================================================================
// Generation backend contract
// ============================================================================

struct GenerationParams {
  double temperature = 0.7;
  int max_tokens = 1024;
  uint64_t seed = 0;
};

struct CompletionRequest {
  std::string system_text;
  std::string user_text;
  std::string image_ref;  // optional
  GenerationParams params;
};

// Text-in/text-out completion. Decoding strategy is the backend's concern;
// the engine only asks for samples.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string name() const = 0;

  // One completion. Throws TransportError, BackendRefused, or EmptyCompletion.
  virtual std::string complete(const CompletionRequest& request) = 0;

  // n completions. Default issues n complete() calls, re-deriving the seed per
  // sample so each record is reproducible in isolation.
  virtual std::vector<std::string> complete_many(const CompletionRequest& request, int n);
};

// Deterministic test backend backed by a {request_text -> response_text} table.
// Lookup is by user_text: exact match first, then the longest table key that is
// contained in the request (so judge prompts can be keyed by the embedded
// response). Misses raise EmptyCompletion.
class ScriptedBackend final : public GenerationBackend {
 public:
  explicit ScriptedBackend(std::map<std::string, std::string> table, std::string name = "scripted");

  // Always returns the same response regardless of the request.
  static std::shared_ptr<ScriptedBackend> fixed(std::string response, std::string name = "scripted");

  // Returns responses in order, one per call; repeats the last once exhausted.
  static std::shared_ptr<ScriptedBackend> sequence(std::vector<std::string> responses,
                                                   std::string name = "scripted");

  static std::shared_ptr<ScriptedBackend> from_file(const std::string& path);

  std::string name() const override { return name_; }
  std::string complete(const CompletionRequest& request) override;

  int calls() const { return calls_; }

 private:
  ScriptedBackend() = default;
  std::map<std::string, std::string> table_;
  std::vector<std::string> sequence_;
  std::optional<std::string> fixed_;
  std::string name_ = "scripted";
  int calls_ = 0;
};

// ============================================================================
// Panel configuration
// ============================================================================

struct PeerHandle {
  PeerId id;
  std::shared_ptr<GenerationBackend> backend;
  bool can_generate = true;
  bool can_judge = true;
};

enum class PanelMode { single_try, multi_try };

enum class FailurePolicy { drop, abort };

struct PanelConfig {
  std::vector<PeerHandle> members;
  int samples_per_member = 15;  // N; forced to 1 in single_try mode
  PanelMode mode = PanelMode::multi_try;
  bool include_self_eval = true;
  double temperature = 0.7;
  double judge_temperature = 0.0;  // judging knob, independent of generation
  int max_tokens = 1024;
  uint64_t seed = 0;
  FailurePolicy on_partial_failure = FailurePolicy::drop;

  int effective_samples() const { return mode == PanelMode::single_try ? 1 : samples_per_member; }
  void validate(bool for_peer_evaluation = true) const;  // throws ConfigError
  std::map<PeerId, int> member_order() const;
};

// ============================================================================
// Candidate generation
// ============================================================================

struct GenerationFailure {
  PeerId peer_id;
  std::string message;
};

struct GenerationResult {
  std::vector<Candidate> candidates;  // ordered by (member order, sample_index)
  std::vector<GenerationFailure> failures;

  // Enforces the abort policy: throws PartialGenerationFailure if any member failed.
  const GenerationResult& require_complete() const;
};

// Fans one query out across every generating member. Per-sample seeds are
// derived from (config.seed, query.id, peer.id, sample_index).
GenerationResult generate_candidates(const PanelConfig& panel, const Query& query);

}  // namespace pop
