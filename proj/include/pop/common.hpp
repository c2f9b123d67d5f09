#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pop {

// ============================================================================
// Errors
// ============================================================================

enum class ErrorKind {
  // backends
  TransportError,
  BackendRefused,
  EmptyCompletion,
  PartialGenerationFailure,
  // judge output handling
  ParseError,
  MissingKey,
  OutOfRange,
  JudgeFailed,
  TooFewCandidates,
  // aggregation
  NoVotes,
  InconsistentCandidateSets,
  // pools
  EmptyPool,
  RewardMissing,
  // curation
  EmptyCategory,
  // objectives
  UnknownToken,
  DivergedLoss,
  // persistence / orchestration
  IoError,
  SchemaViolation,
  ConfigDrift,
  ConfigError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

// ============================================================================
// Hashing (stable across platforms; used for config hashes and seed derivation)
// ============================================================================

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

constexpr uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

constexpr uint64_t fnv1a64_u64(uint64_t v, uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(uint64_t v);

// Seed derivation: mixes a master seed with a path of string parts so that
// every record in the pipeline owns an independent, reproducible RNG stream.
uint64_t derive_seed(uint64_t master, std::initializer_list<std::string_view> path);
uint64_t derive_seed(uint64_t master, std::string_view part);

}  // namespace pop
