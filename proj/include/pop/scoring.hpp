#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pop/panel.hpp"

namespace pop {

// ============================================================================
// Five-axis Likert evaluation
// ============================================================================

struct JudgeScores {
  int helpfulness = 1;
  int correctness = 1;
  int coherence = 1;
  int complexity = 1;
  int verbosity = 1;

  int sum() const { return helpfulness + correctness + coherence + complexity + verbosity; }
  bool operator==(const JudgeScores&) const = default;
};

// reward = (sum of the five axes) / 25, so the range is exactly [0.2, 1.0]
double normalize(const JudgeScores& scores);

struct ScoreRecord {
  PeerId judge_id;
  std::string candidate_id;
  std::string query_id;
  JudgeScores scores;
  double reward = 0.0;
};

enum class ScoringMode { absolute, relative };

struct EvaluationPrompt {
  std::string system_text;
  std::string user_text;
  ScoringMode mode = ScoringMode::absolute;
  std::vector<std::string> candidate_ids;  // presentation order
  std::vector<std::string> labels;         // labels[i] names candidate_ids[i] in the prompt
  bool oversize = false;                   // relative prompt exceeded the context budget
};

struct RelativeVerdict {
  PeerId judge_id;
  std::vector<std::string> ranking;                        // candidate ids, best first
  std::vector<std::pair<std::string, double>> scores;      // (candidate id, score in [0,1])
  bool has_ranking() const { return !ranking.empty(); }
};

// ============================================================================
// Prompt construction
// ============================================================================

const std::string& eval_system_prompt();

// Single-response evaluation prompt. No golden answer is ever included; the
// judge rates from its own knowledge.
EvaluationPrompt build_eval_prompt(const Query& query, const Candidate& candidate);

// Recovers the {question} and {response} slots from a built absolute prompt.
std::pair<std::string, std::string> extract_prompt_slots(const std::string& user_text);

enum class RelativeOutput { ranking, scores };

struct RelativePromptOptions {
  RelativeOutput output = RelativeOutput::ranking;
  size_t context_budget_chars = 32768;
  uint64_t seed = 0;  // mixed with (judge id, query id) by callers
};

// Multi-response prompt with seeded presentation order and stable labels
// A, B, C, ... Throws TooFewCandidates below 2 entries.
EvaluationPrompt build_relative_prompt(const Query& query, const std::vector<Candidate>& candidates,
                                       const RelativePromptOptions& options);

std::string relative_label(size_t index);  // A..Z, AA, AB, ...

// ============================================================================
// Judge output parsing
// ============================================================================

// Extracts the first parseable JSON object embedded in the text and validates
// the five-axis schema. Throws ParseError / MissingKey / OutOfRange.
JudgeScores parse_judge_output(const std::string& text);

// Serializes scores in the schema the judges are instructed to emit.
std::string to_schema_json(const JudgeScores& scores);

// Decodes a relative verdict against the prompt's label->candidate mapping.
RelativeVerdict parse_relative_output(const std::string& text, const EvaluationPrompt& prompt,
                                      const PeerId& judge_id);

// ============================================================================
// Judging
// ============================================================================

struct JudgeOptions {
  double temperature = 0.0;
  int max_tokens = 512;
  uint64_t seed = 0;
};

// build_eval_prompt -> complete -> parse_judge_output -> normalize, with one
// retry on malformed output (a reminder to output only the JSON object is
// appended). Throws JudgeFailed once the retry is spent; callers treat that
// judge's vote as absent.
ScoreRecord judge_candidate(const PeerHandle& judge, const Query& query, const Candidate& candidate,
                            const JudgeOptions& options = {});

RelativeVerdict judge_relative(const PeerHandle& judge, const Query& query,
                               const std::vector<Candidate>& candidates,
                               const RelativePromptOptions& prompt_options,
                               const JudgeOptions& options = {});

}  // namespace pop
