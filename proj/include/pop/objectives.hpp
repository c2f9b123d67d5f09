#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pop/common.hpp"

namespace pop {

// ============================================================================
// Token sequences and the desk-scale log-probability model
// ============================================================================

using Token = int32_t;
using TokenSequence = std::vector<Token>;

// Order-k Markov table model: one logit row per context, softmax-normalized
// per position. A context is the previous k tokens; positions before the
// start pad with a sentinel, so there are (V+1)^k contexts. Small enough for
// exhaustive finite-difference checks, rich enough for nontrivial gradients.
class TableLogProbModel {
 public:
  TableLogProbModel(int vocab_size, int order);
  static TableLogProbModel random(int vocab_size, int order, uint64_t seed, double scale = 1.0);

  int vocab_size() const { return vocab_; }
  int order() const { return order_; }
  size_t context_count() const { return contexts_; }
  size_t param_count() const { return logits_.size(); }

  std::vector<double>& logits() { return logits_; }
  const std::vector<double>& logits() const { return logits_; }
  double& logit(size_t context, Token t) { return logits_[context * vocab_ + t]; }

  // Context id for the k tokens preceding a position; `window` holds the most
  // recent history (older first) and may be shorter than k.
  size_t context_id(std::span<const Token> window) const;

  // log softmax(logits[context])[t]
  double token_logprob(size_t context, Token t) const;

  void check_token(Token t) const;  // throws UnknownToken outside [0, V)

 private:
  int vocab_;
  int order_;
  size_t contexts_;
  std::vector<double> logits_;  // [context][token]
};

// ============================================================================
// Objectives
// ============================================================================

struct SimPOParams {
  double beta = 2.0;   // reward scale; default is an engine choice
  double gamma = 0.5;  // target reward margin; default is an engine choice
};

struct TokenPair {
  TokenSequence prompt;
  TokenSequence chosen;
  TokenSequence rejected;
};

// Length-normalized sequence log-probability of `response` given `prompt`.
double avg_logprob(const TableLogProbModel& model, const TokenSequence& prompt,
                   const TokenSequence& response);

// -log sigmoid(beta * avg_logprob(chosen) - beta * avg_logprob(rejected) - gamma)
double simpo_loss(const TableLogProbModel& model, const TokenPair& pair, const SimPOParams& params);

// Analytic gradient of simpo_loss w.r.t. the table logits (dense, same layout
// as model.logits()).
std::vector<double> simpo_gradient(const TableLogProbModel& model, const TokenPair& pair,
                                   const SimPOParams& params);

// Mean per-token negative log-likelihood of `target` given `prompt`.
double sft_loss(const TableLogProbModel& model, const TokenSequence& prompt,
                const TokenSequence& target);

std::vector<double> sft_gradient(const TableLogProbModel& model, const TokenSequence& prompt,
                                 const TokenSequence& target);

// d simpo_loss / d gamma = sigmoid(-margin); exposed for gradient checks.
double simpo_gamma_gradient(const TableLogProbModel& model, const TokenPair& pair,
                            const SimPOParams& params);

// ============================================================================
// Dataset-level objective kernels (serial reference + OpenMP)
// ============================================================================

enum class Objective { simpo, sft };

const char* to_string(Objective o);

struct SftTokenRecord {
  TokenSequence prompt;
  TokenSequence target;
};

struct ObjectiveBatch {
  std::vector<TokenPair> pairs;        // simpo
  std::vector<SftTokenRecord> records; // sft
  Objective objective = Objective::simpo;
  size_t size() const { return objective == Objective::simpo ? pairs.size() : records.size(); }
};

// Mean loss / mean gradient over the batch. The serial path is the reference;
// the parallel path computes per-record contributions into slots and folds
// them in record order, so both are bit-identical for any thread count.
double batch_loss_serial(const TableLogProbModel& model, const ObjectiveBatch& batch,
                         const SimPOParams& params);
double batch_loss_parallel(const TableLogProbModel& model, const ObjectiveBatch& batch,
                           const SimPOParams& params, int threads = 0);
std::vector<double> batch_gradient_serial(const TableLogProbModel& model,
                                          const ObjectiveBatch& batch, const SimPOParams& params);
std::vector<double> batch_gradient_parallel(const TableLogProbModel& model,
                                            const ObjectiveBatch& batch, const SimPOParams& params,
                                            int threads = 0);

// ============================================================================
// Toy training
// ============================================================================

struct TrainResult {
  TableLogProbModel model;
  std::vector<double> loss_trace;  // loss_trace[0] is the initial loss
};

// Full-batch gradient descent on the table logits. Throws DivergedLoss on a
// non-finite loss.
TrainResult train_toy(const TableLogProbModel& model, const ObjectiveBatch& batch,
                      const SimPOParams& params, int steps, double step_size, int threads = 1);

// Word-hash tokenizer used by the loss-check CLI to lift text datasets into
// the toy vocabulary.
TokenSequence tokenize(std::string_view text, int vocab_size);

}  // namespace pop
