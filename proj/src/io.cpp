#include "pop/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace pop {

namespace fs = std::filesystem;

// ============================================================================
// File plumbing
// ============================================================================

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) fail(ErrorKind::IoError, "read failed on '" + path + "'");
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open '" + tmp + "' for writing");
    out << content;
    if (!out) fail(ErrorKind::IoError, "write failed on '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::IoError, "cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

nlohmann::json read_json_file(const std::string& path) {
  nlohmann::json parsed = nlohmann::json::parse(read_text_file(path), nullptr, false);
  if (parsed.is_discarded()) fail(ErrorKind::SchemaViolation, path + ": invalid JSON");
  return parsed;
}

void write_json_file(const std::string& path, const nlohmann::json& value, int indent) {
  write_text_file(path, value.dump(indent) + "\n");
}

std::vector<nlohmann::json> read_jsonl_file(const std::string& path) {
  const std::string content = read_text_file(path);
  std::vector<nlohmann::json> lines;
  size_t begin = 0;
  size_t line_number = 0;
  while (begin < content.size()) {
    size_t end = content.find('\n', begin);
    if (end == std::string::npos) end = content.size();
    ++line_number;
    const std::string_view line(content.data() + begin, end - begin);
    if (line.empty()) {
      fail(ErrorKind::SchemaViolation,
           path + ": blank line " + std::to_string(line_number));
    }
    nlohmann::json parsed = nlohmann::json::parse(line, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      fail(ErrorKind::SchemaViolation,
           path + ": line " + std::to_string(line_number) + " is not a JSON object");
    }
    lines.push_back(std::move(parsed));
    begin = end + 1;
  }
  return lines;
}

void write_jsonl_file(const std::string& path, std::span<const nlohmann::json> lines) {
  std::string content;
  for (const nlohmann::json& line : lines) {
    content += line.dump();
    content += '\n';
  }
  write_text_file(path, content);
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create directory '" + path + "': " + ec.message());
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

std::string file_hash(const std::string& path) { return hex64(fnv1a64(read_text_file(path))); }

// ============================================================================
// Record serialization
// ============================================================================

namespace {

void require_key(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::SchemaViolation, std::string("missing \"") + key + "\"");
}

}  // namespace

nlohmann::json candidate_to_json(const Candidate& c) {
  return {{"id", c.id},
          {"peer_id", c.peer_id},
          {"query_id", c.query_id},
          {"sample_index", c.sample_index},
          {"text", c.text}};
}

Candidate candidate_from_json(const nlohmann::json& j) {
  for (const char* key : {"id", "peer_id", "query_id", "sample_index", "text"}) require_key(j, key);
  Candidate c;
  c.id = j["id"].get<std::string>();
  c.query_id = j["query_id"].get<std::string>();
  c.peer_id = j["peer_id"].get<std::string>();
  c.text = j["text"].get<std::string>();
  c.sample_index = j["sample_index"].get<int>();
  return c;
}

nlohmann::json score_to_json(const ScoreRecord& record) {
  return {{"candidate_id", record.candidate_id},
          {"judge_id", record.judge_id},
          {"query_id", record.query_id},
          {"reward", record.reward},
          {"scores",
           {{"Helpfulness", record.scores.helpfulness},
            {"Correctness", record.scores.correctness},
            {"Coherence", record.scores.coherence},
            {"Complexity", record.scores.complexity},
            {"Verbosity", record.scores.verbosity}}}};
}

ScoreRecord score_from_json(const nlohmann::json& j) {
  for (const char* key : {"candidate_id", "judge_id", "query_id", "reward", "scores"}) {
    require_key(j, key);
  }
  ScoreRecord record;
  record.judge_id = j["judge_id"].get<std::string>();
  record.candidate_id = j["candidate_id"].get<std::string>();
  record.query_id = j["query_id"].get<std::string>();
  record.reward = j["reward"].get<double>();
  const nlohmann::json& s = j["scores"];
  for (const char* key : {"Helpfulness", "Correctness", "Coherence", "Complexity", "Verbosity"}) {
    require_key(s, key);
  }
  record.scores.helpfulness = s["Helpfulness"].get<int>();
  record.scores.correctness = s["Correctness"].get<int>();
  record.scores.coherence = s["Coherence"].get<int>();
  record.scores.complexity = s["Complexity"].get<int>();
  record.scores.verbosity = s["Verbosity"].get<int>();
  return record;
}

nlohmann::json reward_to_json(const AggregatedReward& reward) {
  return {{"candidate_id", reward.candidate_id},
          {"n_votes", reward.n_votes},
          {"query_id", reward.query_id},
          {"strategy", to_string(reward.strategy)},
          {"value", reward.value},
          {"vote_std", reward.vote_std}};
}

AggregatedReward reward_from_json(const nlohmann::json& j) {
  for (const char* key : {"candidate_id", "n_votes", "query_id", "strategy", "value", "vote_std"}) {
    require_key(j, key);
  }
  AggregatedReward reward;
  reward.candidate_id = j["candidate_id"].get<std::string>();
  reward.query_id = j["query_id"].get<std::string>();
  reward.value = j["value"].get<double>();
  reward.strategy = aggregation_from_string(j["strategy"].get<std::string>());
  reward.n_votes = j["n_votes"].get<int>();
  reward.vote_std = j["vote_std"].get<double>();
  return reward;
}

namespace {

template <typename T, typename ToJson>
void write_records(const std::string& path, std::span<const T> records, ToJson to_json) {
  std::vector<nlohmann::json> lines;
  lines.reserve(records.size());
  for (const T& record : records) lines.push_back(to_json(record));
  write_jsonl_file(path, lines);
}

template <typename T, typename FromJson>
std::vector<T> read_records(const std::string& path, FromJson from_json) {
  std::vector<T> records;
  const std::vector<nlohmann::json> lines = read_jsonl_file(path);
  records.reserve(lines.size());
  for (size_t i = 0; i < lines.size(); ++i) {
    try {
      records.push_back(from_json(lines[i]));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SchemaViolation) throw;
      fail(ErrorKind::SchemaViolation,
           path + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace

void write_candidates_jsonl(const std::string& path, std::span<const Candidate> candidates) {
  write_records(path, candidates, candidate_to_json);
}

std::vector<Candidate> read_candidates_jsonl(const std::string& path) {
  return read_records<Candidate>(path, candidate_from_json);
}

void write_scores_jsonl(const std::string& path, std::span<const ScoreRecord> records) {
  write_records(path, records, score_to_json);
}

std::vector<ScoreRecord> read_scores_jsonl(const std::string& path) {
  return read_records<ScoreRecord>(path, score_from_json);
}

void write_rewards_jsonl(const std::string& path, std::span<const AggregatedReward> rewards) {
  write_records(path, rewards, reward_to_json);
}

std::vector<AggregatedReward> read_rewards_jsonl(const std::string& path) {
  return read_records<AggregatedReward>(path, reward_from_json);
}

}  // namespace pop
