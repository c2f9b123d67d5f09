#include "pop/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pop/rng.hpp"

namespace pop {

double normalize(const JudgeScores& scores) { return scores.sum() / 25.0; }

// ============================================================================
// Prompt construction
// ============================================================================

namespace {

constexpr const char* kAxisNames[5] = {"Helpfulness", "Correctness", "Coherence", "Complexity",
                                       "Verbosity"};

const char* kEvaluationCriteria =
    "Please rate the response using a 5-point Likert scale across the following dimensions: "
    "Helpfulness, Correctness, Coherence, Complexity, and Verbosity.";

const char* kRatingGuidelines =
    "- Helpfulness: Rate from 1 (not useful at all) to 5 (extremely helpful).\n"
    "- Correctness: Score from 1 (completely incorrect) to 5 (fully correct and accurate).\n"
    "- Coherence: Evaluate from 1 (completely incoherent) to 5 (perfectly coherent and clear).\n"
    "- Complexity: Assess from 1 (basic, understandable by children) to 5 (expert level, "
    "specialized vocabulary).\n"
    "- Verbosity: Judge from 1 (very concise) to 5 (highly detailed and verbose).";

const char* kBriefDefinitions =
    "- Helpfulness relates to the utility of the response in addressing the user's need.\n"
    "- Correctness ensures the response is factual and free from errors.\n"
    "- Coherence checks for logical flow and consistency in the response.\n"
    "- Complexity reflects the sophistication of language and concepts used.\n"
    "- Verbosity measures the brevity or expansiveness of the response.";

const char* kSchemaLine =
    "{\"Helpfulness\": (int), \"Correctness\": (int), \"Coherence\": (int), \"Complexity\": "
    "(int), \"Verbosity\": (int) }";

const char* kOnlyJsonInstruction =
    "Your answer should look like this. Only output result in the following JSON schema format:";

std::string shared_rubric() {
  std::string text;
  text += "[Evaluation Criteria]\n";
  text += kEvaluationCriteria;
  text += "\n\n[Rating Guidelines]\n";
  text += kRatingGuidelines;
  text += "\n\n[Brief Definitions]\n";
  text += kBriefDefinitions;
  text += "\n\n";
  return text;
}

}  // namespace

const std::string& eval_system_prompt() {
  static const std::string text =
      "You are an expert evaluation model. You are asked to evaluate the AI assistant's response "
      "to a user's question based on an image. You will see the user's question, the related "
      "image, and the AI's response.";
  return text;
}

EvaluationPrompt build_eval_prompt(const Query& query, const Candidate& candidate) {
  EvaluationPrompt prompt;
  prompt.system_text = eval_system_prompt();
  prompt.mode = ScoringMode::absolute;
  prompt.candidate_ids = {candidate.id};

  std::string text = shared_rubric();
  text += "Here is the question and the assistant response:\n";
  text += "[Question]\n";
  text += query.prompt;
  text += "\n[Assistant Response]\n";
  text += candidate.text;
  text += "\n\n[JSON Output]\n";
  text += kOnlyJsonInstruction;
  text += "\n";
  text += kSchemaLine;
  prompt.user_text = std::move(text);
  return prompt;
}

std::pair<std::string, std::string> extract_prompt_slots(const std::string& user_text) {
  static const std::string question_tag = "[Question]\n";
  static const std::string response_tag = "\n[Assistant Response]\n";
  static const std::string output_tag = "\n\n[JSON Output]\n";

  const size_t q_at = user_text.find(question_tag);
  if (q_at == std::string::npos) fail(ErrorKind::ParseError, "prompt has no [Question] section");
  const size_t q_begin = q_at + question_tag.size();
  const size_t r_at = user_text.find(response_tag, q_begin);
  if (r_at == std::string::npos) {
    fail(ErrorKind::ParseError, "prompt has no [Assistant Response] section");
  }
  const size_t r_begin = r_at + response_tag.size();
  // The real output section trails the response, so take the last occurrence.
  const size_t o_at = user_text.rfind(output_tag);
  if (o_at == std::string::npos || o_at < r_begin) {
    fail(ErrorKind::ParseError, "prompt has no [JSON Output] section");
  }
  return {user_text.substr(q_begin, r_at - q_begin), user_text.substr(r_begin, o_at - r_begin)};
}

std::string relative_label(size_t index) {
  std::string label;
  size_t n = index + 1;  // bijective base-26
  while (n > 0) {
    --n;
    label.push_back(static_cast<char>('A' + n % 26));
    n /= 26;
  }
  std::reverse(label.begin(), label.end());
  return label;
}

EvaluationPrompt build_relative_prompt(const Query& query, const std::vector<Candidate>& candidates,
                                       const RelativePromptOptions& options) {
  if (candidates.size() < 2) {
    fail(ErrorKind::TooFewCandidates, "relative scoring needs at least 2 candidates, got " +
                                          std::to_string(candidates.size()));
  }

  // Seeded presentation order counters position bias; the mapping back to
  // candidate ids travels with the prompt.
  std::vector<size_t> order(candidates.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(options.seed);
  rng.shuffle(order.data(), order.size());

  EvaluationPrompt prompt;
  prompt.system_text = eval_system_prompt();
  prompt.mode = ScoringMode::relative;

  std::string text = shared_rubric();
  text += "Here is the question and the candidate responses:\n";
  text += "[Question]\n";
  text += query.prompt;
  text += "\n";
  for (size_t i = 0; i < order.size(); ++i) {
    const std::string label = relative_label(i);
    const Candidate& candidate = candidates[order[i]];
    prompt.labels.push_back(label);
    prompt.candidate_ids.push_back(candidate.id);
    text += "[Response " + label + "]\n";
    text += candidate.text;
    text += "\n";
  }
  text += "\n[JSON Output]\n";
  if (options.output == RelativeOutput::ranking) {
    text +=
        "Rank every response from best to worst. Only output result in the following JSON "
        "schema format:\n";
    text += "{\"ranking\": [";
    for (size_t i = 0; i < prompt.labels.size(); ++i) {
      if (i > 0) text += ", ";
      text += "\"" + prompt.labels[i] + "\"";
    }
    text += "]}";
  } else {
    text +=
        "Score every response between 0 and 1. Only output result in the following JSON schema "
        "format:\n";
    text += "{\"scores\": {";
    for (size_t i = 0; i < prompt.labels.size(); ++i) {
      if (i > 0) text += ", ";
      text += "\"" + prompt.labels[i] + "\": (float)";
    }
    text += "}}";
  }
  prompt.user_text = std::move(text);
  prompt.oversize = prompt.user_text.size() > options.context_budget_chars;
  return prompt;
}

// ============================================================================
// Judge output parsing
// ============================================================================

namespace {

// Finds the first substring that parses as a JSON object. Judges wrap their
// verdicts in prose often enough that this cannot assume the reply is bare
// JSON. Balance-scans from each '{', skipping string contents and escapes.
std::optional<nlohmann::json> first_json_object(const std::string& text) {
  for (size_t start = text.find('{'); start != std::string::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          nlohmann::json parsed =
              nlohmann::json::parse(text.substr(start, i - start + 1), nullptr, false);
          if (!parsed.is_discarded() && parsed.is_object()) return parsed;
          break;  // balanced but unparseable; try the next '{'
        }
      }
    }
  }
  return std::nullopt;
}

int read_likert_axis(const nlohmann::json& object, const char* key) {
  auto it = object.find(key);
  if (it == object.end()) {
    fail(ErrorKind::MissingKey, std::string("judge output lacks \"") + key + "\"");
  }
  if (!it->is_number()) {
    fail(ErrorKind::OutOfRange, std::string("\"") + key + "\" is not a number");
  }
  const double value = it->get<double>();
  const double rounded = std::nearbyint(value);
  if (value != rounded) {
    fail(ErrorKind::OutOfRange,
         std::string("\"") + key + "\" = " + std::to_string(value) + " is not an integer");
  }
  if (rounded < 1.0 || rounded > 5.0) {
    fail(ErrorKind::OutOfRange, std::string("\"") + key + "\" = " +
                                    std::to_string(static_cast<int>(rounded)) +
                                    " is outside [1, 5]");
  }
  return static_cast<int>(rounded);
}

}  // namespace

JudgeScores parse_judge_output(const std::string& text) {
  std::optional<nlohmann::json> object = first_json_object(text);
  if (!object) fail(ErrorKind::ParseError, "no JSON object in judge output");
  JudgeScores scores;
  scores.helpfulness = read_likert_axis(*object, kAxisNames[0]);
  scores.correctness = read_likert_axis(*object, kAxisNames[1]);
  scores.coherence = read_likert_axis(*object, kAxisNames[2]);
  scores.complexity = read_likert_axis(*object, kAxisNames[3]);
  scores.verbosity = read_likert_axis(*object, kAxisNames[4]);
  return scores;
}

std::string to_schema_json(const JudgeScores& scores) {
  std::ostringstream out;
  out << "{\"Helpfulness\": " << scores.helpfulness << ", \"Correctness\": " << scores.correctness
      << ", \"Coherence\": " << scores.coherence << ", \"Complexity\": " << scores.complexity
      << ", \"Verbosity\": " << scores.verbosity << "}";
  return out.str();
}

RelativeVerdict parse_relative_output(const std::string& text, const EvaluationPrompt& prompt,
                                      const PeerId& judge_id) {
  std::optional<nlohmann::json> object = first_json_object(text);
  if (!object) fail(ErrorKind::ParseError, "no JSON object in judge output");

  std::map<std::string, std::string> by_label;
  for (size_t i = 0; i < prompt.labels.size(); ++i) {
    by_label[prompt.labels[i]] = prompt.candidate_ids[i];
  }

  RelativeVerdict verdict;
  verdict.judge_id = judge_id;

  if (auto it = object->find("ranking"); it != object->end()) {
    if (!it->is_array()) fail(ErrorKind::ParseError, "\"ranking\" is not an array");
    std::set<std::string> seen;
    for (const auto& entry : *it) {
      if (!entry.is_string()) fail(ErrorKind::ParseError, "\"ranking\" entry is not a string");
      const std::string label = entry.get<std::string>();
      auto found = by_label.find(label);
      if (found == by_label.end()) {
        fail(ErrorKind::ParseError, "\"ranking\" names unknown label '" + label + "'");
      }
      if (!seen.insert(label).second) {
        fail(ErrorKind::ParseError, "\"ranking\" repeats label '" + label + "'");
      }
      verdict.ranking.push_back(found->second);
    }
    if (verdict.ranking.size() != prompt.labels.size()) {
      fail(ErrorKind::ParseError, "\"ranking\" covers " + std::to_string(verdict.ranking.size()) +
                                      " of " + std::to_string(prompt.labels.size()) + " labels");
    }
    return verdict;
  }

  if (auto it = object->find("scores"); it != object->end()) {
    if (!it->is_object()) fail(ErrorKind::ParseError, "\"scores\" is not an object");
    for (const auto& [label, id] : by_label) {
      auto entry = it->find(label);
      if (entry == it->end()) {
        fail(ErrorKind::MissingKey, "\"scores\" lacks label '" + label + "'");
      }
      if (!entry->is_number()) {
        fail(ErrorKind::OutOfRange, "score for '" + label + "' is not a number");
      }
      const double value = entry->get<double>();
      if (value < 0.0 || value > 1.0) {
        fail(ErrorKind::OutOfRange,
             "score for '" + label + "' = " + std::to_string(value) + " is outside [0, 1]");
      }
      verdict.scores.emplace_back(id, value);
    }
    return verdict;
  }

  fail(ErrorKind::MissingKey, "judge output has neither \"ranking\" nor \"scores\"");
}

// ============================================================================
// Judging
// ============================================================================

namespace {

bool is_parse_family(ErrorKind kind) {
  return kind == ErrorKind::ParseError || kind == ErrorKind::MissingKey ||
         kind == ErrorKind::OutOfRange;
}

// One completion plus one retry on malformed output. The retry appends an
// explicit reminder and re-derives the seed so a sampling backend will not
// replay the identical bad reply.
template <typename Parse>
auto complete_and_parse(const PeerHandle& judge, const EvaluationPrompt& prompt,
                        const std::string& image_ref, const JudgeOptions& options, Parse parse) {
  CompletionRequest request;
  request.system_text = prompt.system_text;
  request.user_text = prompt.user_text;
  request.image_ref = image_ref;
  request.params.temperature = options.temperature;
  request.params.max_tokens = options.max_tokens;
  request.params.seed = options.seed;

  try {
    return parse(judge.backend->complete(request));
  } catch (const Error& first) {
    if (!is_parse_family(first.kind())) {
      fail(ErrorKind::JudgeFailed, judge.id + ": " + first.what());
    }
    CompletionRequest retry = request;
    retry.user_text += "\n\nOutput only the JSON object.";
    retry.params.seed = derive_seed(options.seed, "retry");
    try {
      return parse(judge.backend->complete(retry));
    } catch (const Error& second) {
      fail(ErrorKind::JudgeFailed, judge.id + ": " + second.what());
    }
  }
}

}  // namespace

ScoreRecord judge_candidate(const PeerHandle& judge, const Query& query, const Candidate& candidate,
                            const JudgeOptions& options) {
  const EvaluationPrompt prompt = build_eval_prompt(query, candidate);
  const JudgeScores scores =
      complete_and_parse(judge, prompt, query.image_ref, options,
                         [](const std::string& text) { return parse_judge_output(text); });
  ScoreRecord record;
  record.judge_id = judge.id;
  record.candidate_id = candidate.id;
  record.query_id = query.id;
  record.scores = scores;
  record.reward = normalize(scores);
  return record;
}

RelativeVerdict judge_relative(const PeerHandle& judge, const Query& query,
                               const std::vector<Candidate>& candidates,
                               const RelativePromptOptions& prompt_options,
                               const JudgeOptions& options) {
  RelativePromptOptions shuffled = prompt_options;
  shuffled.seed = derive_seed(prompt_options.seed, {"relative", judge.id, query.id});
  const EvaluationPrompt prompt = build_relative_prompt(query, candidates, shuffled);
  return complete_and_parse(judge, prompt, query.image_ref, options,
                            [&](const std::string& text) {
                              return parse_relative_output(text, prompt, judge.id);
                            });
}

}  // namespace pop
