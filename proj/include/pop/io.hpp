#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pop/aggregate.hpp"
#include "pop/panel.hpp"
#include "pop/scoring.hpp"

namespace pop {

// ============================================================================
// File plumbing
// ============================================================================

// Reads a whole file; throws Error(IoError) when it cannot be opened.
std::string read_text_file(const std::string& path);

// Atomic-ish write: writes to `<path>.tmp` then renames over `path`.
void write_text_file(const std::string& path, const std::string& content);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& value, int indent = 2);

// One JSON object per line. Blank lines are rejected; a malformed line throws
// Error(SchemaViolation) naming the 1-based line number.
std::vector<nlohmann::json> read_jsonl_file(const std::string& path);
void write_jsonl_file(const std::string& path, std::span<const nlohmann::json> lines);

void ensure_directory(const std::string& path);
bool file_exists(const std::string& path);

// Content fingerprint used for manifest reconciliation.
std::string file_hash(const std::string& path);

// ============================================================================
// Line-record serialization for run artifacts
// ============================================================================

nlohmann::json candidate_to_json(const Candidate& c);
Candidate candidate_from_json(const nlohmann::json& j);
void write_candidates_jsonl(const std::string& path, std::span<const Candidate> candidates);
std::vector<Candidate> read_candidates_jsonl(const std::string& path);

nlohmann::json score_to_json(const ScoreRecord& record);
ScoreRecord score_from_json(const nlohmann::json& j);
void write_scores_jsonl(const std::string& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores_jsonl(const std::string& path);

nlohmann::json reward_to_json(const AggregatedReward& reward);
AggregatedReward reward_from_json(const nlohmann::json& j);
void write_rewards_jsonl(const std::string& path, std::span<const AggregatedReward> rewards);
std::vector<AggregatedReward> read_rewards_jsonl(const std::string& path);

}  // namespace pop
