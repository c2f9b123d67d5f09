#include "pop/common.hpp"

#include <array>

namespace pop {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::BackendRefused: return "BackendRefused";
    case ErrorKind::EmptyCompletion: return "EmptyCompletion";
    case ErrorKind::PartialGenerationFailure: return "PartialGenerationFailure";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::MissingKey: return "MissingKey";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::JudgeFailed: return "JudgeFailed";
    case ErrorKind::TooFewCandidates: return "TooFewCandidates";
    case ErrorKind::NoVotes: return "NoVotes";
    case ErrorKind::InconsistentCandidateSets: return "InconsistentCandidateSets";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::RewardMissing: return "RewardMissing";
    case ErrorKind::EmptyCategory: return "EmptyCategory";
    case ErrorKind::UnknownToken: return "UnknownToken";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::ConfigDrift: return "ConfigDrift";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "UnknownError";
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

uint64_t derive_seed(uint64_t master, std::initializer_list<std::string_view> path) {
  uint64_t h = fnv1a64_u64(master);
  for (std::string_view part : path) {
    h = fnv1a64(part, h);
    h = fnv1a64("/", h);  // separator so ("ab","c") != ("a","bc")
  }
  return h;
}

uint64_t derive_seed(uint64_t master, std::string_view part) {
  return derive_seed(master, {part});
}

}  // namespace pop
