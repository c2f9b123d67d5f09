#include "pop/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pop/rng.hpp"

namespace pop {

// ============================================================================
// Table model
// ============================================================================

TableLogProbModel::TableLogProbModel(int vocab_size, int order)
    : vocab_(vocab_size), order_(order) {
  if (vocab_size < 2) fail(ErrorKind::ConfigError, "vocab size must be >= 2");
  if (order < 0 || order > 4) fail(ErrorKind::ConfigError, "model order must be in [0, 4]");
  contexts_ = 1;
  for (int i = 0; i < order_; ++i) contexts_ *= static_cast<size_t>(vocab_ + 1);
  logits_.assign(contexts_ * static_cast<size_t>(vocab_), 0.0);
}

TableLogProbModel TableLogProbModel::random(int vocab_size, int order, uint64_t seed,
                                            double scale) {
  TableLogProbModel model(vocab_size, order);
  Rng rng(derive_seed(seed, "table-logits"));
  for (double& logit : model.logits_) logit = rng.gaussian(0.0, scale);
  return model;
}

void TableLogProbModel::check_token(Token t) const {
  if (t < 0 || t >= vocab_) {
    fail(ErrorKind::UnknownToken,
         "token " + std::to_string(t) + " outside vocab [0, " + std::to_string(vocab_) + ")");
  }
}

size_t TableLogProbModel::context_id(std::span<const Token> window) const {
  // Older-first digits; positions before the sequence start pad with the
  // sentinel V at the old end.
  const Token sentinel = static_cast<Token>(vocab_);
  size_t id = 0;
  const size_t have = window.size() > static_cast<size_t>(order_)
                          ? static_cast<size_t>(order_)
                          : window.size();
  const size_t pad = static_cast<size_t>(order_) - have;
  for (size_t i = 0; i < pad; ++i) id = id * static_cast<size_t>(vocab_ + 1) +
                                        static_cast<size_t>(sentinel);
  for (size_t i = window.size() - have; i < window.size(); ++i) {
    check_token(window[i]);
    id = id * static_cast<size_t>(vocab_ + 1) + static_cast<size_t>(window[i]);
  }
  return id;
}

double TableLogProbModel::token_logprob(size_t context, Token t) const {
  check_token(t);
  const double* row = logits_.data() + context * static_cast<size_t>(vocab_);
  double row_max = row[0];
  for (int v = 1; v < vocab_; ++v) row_max = std::max(row_max, row[v]);
  double sum = 0.0;
  for (int v = 0; v < vocab_; ++v) sum += std::exp(row[v] - row_max);
  return row[static_cast<size_t>(t)] - row_max - std::log(sum);
}

// ============================================================================
// Sequence scoring
// ============================================================================

namespace {

// Walks a response position by position, invoking fn(context_id, token) with
// the context formed by the last `order` tokens of prompt+response-so-far.
template <typename Fn>
void walk_response(const TableLogProbModel& model, const TokenSequence& prompt,
                   const TokenSequence& response, Fn&& fn) {
  TokenSequence history = prompt;
  history.reserve(prompt.size() + response.size());
  for (Token t : response) {
    fn(model.context_id(history), t);
    history.push_back(t);
  }
}

double stable_softplus(double x) {
  // log(1 + e^x) without overflow on either tail
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double simpo_margin(const TableLogProbModel& model, const TokenPair& pair,
                    const SimPOParams& params) {
  const double chosen = avg_logprob(model, pair.prompt, pair.chosen);
  const double rejected = avg_logprob(model, pair.prompt, pair.rejected);
  return params.beta * chosen - params.beta * rejected - params.gamma;
}

// Adds scale * d(avg_logprob)/d(logits) for one response into grad.
void accumulate_response_gradient(const TableLogProbModel& model, const TokenSequence& prompt,
                                  const TokenSequence& response, double scale,
                                  std::vector<double>& grad) {
  if (response.empty()) fail(ErrorKind::ConfigError, "empty response in gradient");
  const double per_token = scale / static_cast<double>(response.size());
  const int vocab = model.vocab_size();
  walk_response(model, prompt, response, [&](size_t context, Token target) {
    const double* row = model.logits().data() + context * static_cast<size_t>(vocab);
    double row_max = row[0];
    for (int v = 1; v < vocab; ++v) row_max = std::max(row_max, row[v]);
    double sum = 0.0;
    for (int v = 0; v < vocab; ++v) sum += std::exp(row[v] - row_max);
    double* out = grad.data() + context * static_cast<size_t>(vocab);
    for (int v = 0; v < vocab; ++v) {
      const double p = std::exp(row[v] - row_max) / sum;
      const double indicator = (v == target) ? 1.0 : 0.0;
      out[v] += per_token * (indicator - p);
    }
  });
}

}  // namespace

double avg_logprob(const TableLogProbModel& model, const TokenSequence& prompt,
                   const TokenSequence& response) {
  if (response.empty()) fail(ErrorKind::ConfigError, "average log-probability of an empty response");
  double total = 0.0;
  walk_response(model, prompt, response,
                [&](size_t context, Token t) { total += model.token_logprob(context, t); });
  return total / static_cast<double>(response.size());
}

double simpo_loss(const TableLogProbModel& model, const TokenPair& pair,
                  const SimPOParams& params) {
  // -log sigmoid(m) == softplus(-m)
  return stable_softplus(-simpo_margin(model, pair, params));
}

std::vector<double> simpo_gradient(const TableLogProbModel& model, const TokenPair& pair,
                                   const SimPOParams& params) {
  const double margin = simpo_margin(model, pair, params);
  const double dloss_dmargin = -sigmoid(-margin);
  std::vector<double> grad(model.param_count(), 0.0);
  accumulate_response_gradient(model, pair.prompt, pair.chosen, dloss_dmargin * params.beta, grad);
  accumulate_response_gradient(model, pair.prompt, pair.rejected, -dloss_dmargin * params.beta,
                               grad);
  return grad;
}

double simpo_gamma_gradient(const TableLogProbModel& model, const TokenPair& pair,
                            const SimPOParams& params) {
  return sigmoid(-simpo_margin(model, pair, params));
}

double sft_loss(const TableLogProbModel& model, const TokenSequence& prompt,
                const TokenSequence& target) {
  return -avg_logprob(model, prompt, target);
}

std::vector<double> sft_gradient(const TableLogProbModel& model, const TokenSequence& prompt,
                                 const TokenSequence& target) {
  std::vector<double> grad(model.param_count(), 0.0);
  accumulate_response_gradient(model, prompt, target, -1.0, grad);
  return grad;
}

// ============================================================================
// Batch kernels
// ============================================================================

const char* to_string(Objective o) { return o == Objective::simpo ? "simpo" : "sft"; }

namespace {

double record_loss(const TableLogProbModel& model, const ObjectiveBatch& batch, size_t i,
                   const SimPOParams& params) {
  if (batch.objective == Objective::simpo) return simpo_loss(model, batch.pairs[i], params);
  return sft_loss(model, batch.records[i].prompt, batch.records[i].target);
}

std::vector<double> record_gradient(const TableLogProbModel& model, const ObjectiveBatch& batch,
                                    size_t i, const SimPOParams& params) {
  if (batch.objective == Objective::simpo) return simpo_gradient(model, batch.pairs[i], params);
  return sft_gradient(model, batch.records[i].prompt, batch.records[i].target);
}

void require_nonempty(const ObjectiveBatch& batch) {
  if (batch.size() == 0) fail(ErrorKind::ConfigError, "objective batch is empty");
}

int resolve_threads(int threads) {
#ifdef _OPENMP
  return threads > 0 ? threads : omp_get_max_threads();
#else
  (void)threads;
  return 1;
#endif
}

}  // namespace

double batch_loss_serial(const TableLogProbModel& model, const ObjectiveBatch& batch,
                         const SimPOParams& params) {
  require_nonempty(batch);
  double total = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) total += record_loss(model, batch, i, params);
  return total / static_cast<double>(batch.size());
}

double batch_loss_parallel(const TableLogProbModel& model, const ObjectiveBatch& batch,
                           const SimPOParams& params, int threads) {
  require_nonempty(batch);
  const size_t n = batch.size();
  std::vector<double> slots(n, 0.0);
  const int t = resolve_threads(threads);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(t)
#endif
  for (size_t i = 0; i < n; ++i) slots[i] = record_loss(model, batch, i, params);
  (void)t;
  // Record-order fold keeps the sum bit-identical to the serial reference.
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) total += slots[i];
  return total / static_cast<double>(n);
}

std::vector<double> batch_gradient_serial(const TableLogProbModel& model,
                                          const ObjectiveBatch& batch, const SimPOParams& params) {
  require_nonempty(batch);
  std::vector<double> acc(model.param_count(), 0.0);
  for (size_t i = 0; i < batch.size(); ++i) {
    const std::vector<double> g = record_gradient(model, batch, i, params);
    for (size_t p = 0; p < acc.size(); ++p) acc[p] += g[p];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : acc) v *= inv;
  return acc;
}

std::vector<double> batch_gradient_parallel(const TableLogProbModel& model,
                                            const ObjectiveBatch& batch, const SimPOParams& params,
                                            int threads) {
  require_nonempty(batch);
  const size_t n = batch.size();
  std::vector<std::vector<double>> slots(n);
  const int t = resolve_threads(threads);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(t)
#endif
  for (size_t i = 0; i < n; ++i) slots[i] = record_gradient(model, batch, i, params);
  (void)t;
  std::vector<double> acc(model.param_count(), 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t p = 0; p < acc.size(); ++p) acc[p] += slots[i][p];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : acc) v *= inv;
  return acc;
}

// ============================================================================
// Toy training
// ============================================================================

TrainResult train_toy(const TableLogProbModel& model, const ObjectiveBatch& batch,
                      const SimPOParams& params, int steps, double step_size, int threads) {
  if (steps < 0) fail(ErrorKind::ConfigError, "steps must be >= 0");
  TrainResult result{model, {}};
  result.loss_trace.reserve(static_cast<size_t>(steps) + 1);

  auto loss_at = [&](const TableLogProbModel& m) {
    const double loss = threads == 1 ? batch_loss_serial(m, batch, params)
                                     : batch_loss_parallel(m, batch, params, threads);
    if (!std::isfinite(loss)) {
      fail(ErrorKind::DivergedLoss, "loss is not finite; reduce the step size");
    }
    return loss;
  };

  result.loss_trace.push_back(loss_at(result.model));
  for (int s = 0; s < steps; ++s) {
    const std::vector<double> grad =
        threads == 1 ? batch_gradient_serial(result.model, batch, params)
                     : batch_gradient_parallel(result.model, batch, params, threads);
    std::vector<double>& logits = result.model.logits();
    for (size_t p = 0; p < logits.size(); ++p) logits[p] -= step_size * grad[p];
    result.loss_trace.push_back(loss_at(result.model));
  }
  return result;
}

TokenSequence tokenize(std::string_view text, int vocab_size) {
  if (vocab_size < 2) fail(ErrorKind::ConfigError, "vocab size must be >= 2");
  TokenSequence tokens;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      tokens.push_back(static_cast<Token>(fnv1a64(text.substr(i, j - i)) %
                                          static_cast<uint64_t>(vocab_size)));
    }
    i = j;
  }
  return tokens;
}

}  // namespace pop
