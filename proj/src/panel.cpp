#include "pop/panel.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "pop/io.hpp"

namespace pop {

// ============================================================================
// Categories
// ============================================================================

const char* to_string(Category c) {
  switch (c) {
    case Category::Language: return "Language";
    case Category::GeneralKnowledge: return "GeneralKnowledge";
    case Category::OCR: return "OCR";
    case Category::Counting: return "Counting";
    case Category::Math: return "Math";
    case Category::Code: return "Code";
    case Category::ScientificKnowledge: return "ScientificKnowledge";
  }
  return "Language";
}

Category category_from_string(std::string_view name) {
  for (Category c : kAllCategories) {
    if (name == to_string(c)) return c;
  }
  fail(ErrorKind::SchemaViolation, "unknown category '" + std::string(name) + "'");
}

// ============================================================================
// Backends
// ============================================================================

std::vector<std::string> GenerationBackend::complete_many(const CompletionRequest& request, int n) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    CompletionRequest per_sample = request;
    per_sample.params.seed = derive_seed(request.params.seed, {"sample", std::to_string(i)});
    out.push_back(complete(per_sample));
  }
  return out;
}

ScriptedBackend::ScriptedBackend(std::map<std::string, std::string> table, std::string name)
    : table_(std::move(table)), name_(std::move(name)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::fixed(std::string response, std::string name) {
  auto backend = std::shared_ptr<ScriptedBackend>(new ScriptedBackend());
  backend->fixed_ = std::move(response);
  backend->name_ = std::move(name);
  return backend;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::sequence(std::vector<std::string> responses,
                                                           std::string name) {
  if (responses.empty()) fail(ErrorKind::ConfigError, "scripted sequence must not be empty");
  auto backend = std::shared_ptr<ScriptedBackend>(new ScriptedBackend());
  backend->sequence_ = std::move(responses);
  backend->name_ = std::move(name);
  return backend;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
  nlohmann::json root = read_json_file(path);
  if (!root.is_object()) fail(ErrorKind::SchemaViolation, path + ": expected a JSON object");
  std::map<std::string, std::string> table;
  for (const auto& [key, value] : root.items()) {
    if (!value.is_string()) {
      fail(ErrorKind::SchemaViolation, path + ": value for '" + key + "' must be a string");
    }
    table[key] = value.get<std::string>();
  }
  return std::make_shared<ScriptedBackend>(std::move(table), "scripted:" + path);
}

std::string ScriptedBackend::complete(const CompletionRequest& request) {
  ++calls_;
  if (fixed_) return *fixed_;
  if (!sequence_.empty()) {
    const size_t index = std::min(static_cast<size_t>(calls_ - 1), sequence_.size() - 1);
    return sequence_[index];
  }
  if (auto it = table_.find(request.user_text); it != table_.end()) return it->second;
  // Longest key contained in the request, so judge prompts can be keyed by the
  // candidate text they embed.
  const std::string* best = nullptr;
  size_t best_len = 0;
  for (const auto& [key, value] : table_) {
    if (key.size() > best_len && request.user_text.find(key) != std::string::npos) {
      best = &value;
      best_len = key.size();
    }
  }
  if (best) return *best;
  fail(ErrorKind::EmptyCompletion,
       name_ + ": no scripted response matches the request");
}

// ============================================================================
// Panel configuration
// ============================================================================

void PanelConfig::validate(bool for_peer_evaluation) const {
  if (members.empty()) fail(ErrorKind::ConfigError, "panel has no members");
  const size_t judges =
      static_cast<size_t>(std::count_if(members.begin(), members.end(),
                                        [](const PeerHandle& m) { return m.can_judge; }));
  const size_t generators =
      static_cast<size_t>(std::count_if(members.begin(), members.end(),
                                        [](const PeerHandle& m) { return m.can_generate; }));
  if (generators == 0) fail(ErrorKind::ConfigError, "panel has no generating members");
  if (for_peer_evaluation && judges < 2) {
    fail(ErrorKind::ConfigError, "peer evaluation needs at least 2 judges, got " +
                                     std::to_string(judges));
  }
  if (samples_per_member < 1) {
    fail(ErrorKind::ConfigError, "samples_per_member must be >= 1, got " +
                                     std::to_string(samples_per_member));
  }
  std::set<PeerId> ids;
  for (const auto& member : members) {
    if (member.id.empty()) fail(ErrorKind::ConfigError, "panel member with empty id");
    if (!member.backend) fail(ErrorKind::ConfigError, "member '" + member.id + "' has no backend");
    if (!ids.insert(member.id).second) {
      fail(ErrorKind::ConfigError, "duplicate panel member id '" + member.id + "'");
    }
  }
}

std::map<PeerId, int> PanelConfig::member_order() const {
  std::map<PeerId, int> order;
  for (size_t i = 0; i < members.size(); ++i) order[members[i].id] = static_cast<int>(i);
  return order;
}

// ============================================================================
// Generation
// ============================================================================

const GenerationResult& GenerationResult::require_complete() const {
  if (!failures.empty()) {
    std::string detail = failures.front().peer_id + ": " + failures.front().message;
    if (failures.size() > 1) {
      detail += " (+" + std::to_string(failures.size() - 1) + " more)";
    }
    fail(ErrorKind::PartialGenerationFailure, detail);
  }
  return *this;
}

GenerationResult generate_candidates(const PanelConfig& panel, const Query& query) {
  GenerationResult result;
  const int n = panel.effective_samples();
  for (const auto& member : panel.members) {
    if (!member.can_generate) continue;
    CompletionRequest request;
    request.user_text = query.prompt;
    request.image_ref = query.image_ref;
    request.params.temperature = panel.temperature;
    request.params.max_tokens = panel.max_tokens;
    request.params.seed = derive_seed(panel.seed, {query.id, member.id});
    try {
      std::vector<std::string> texts = member.backend->complete_many(request, n);
      if (static_cast<int>(texts.size()) != n) {
        fail(ErrorKind::EmptyCompletion,
             "backend returned " + std::to_string(texts.size()) + " of " + std::to_string(n) +
                 " samples");
      }
      for (int k = 0; k < n; ++k) {
        Candidate candidate;
        candidate.id = make_candidate_id(query.id, member.id, k);
        candidate.query_id = query.id;
        candidate.peer_id = member.id;
        candidate.text = std::move(texts[static_cast<size_t>(k)]);
        candidate.sample_index = k;
        result.candidates.push_back(std::move(candidate));
      }
    } catch (const Error& e) {
      result.failures.push_back({member.id, e.what()});
    }
  }
  if (panel.on_partial_failure == FailurePolicy::abort) result.require_complete();
  return result;
}

}  // namespace pop
