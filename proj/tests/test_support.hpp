// Shared fixtures and frozen calibration constants for the test suites.
#pragma once

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pop/panel.hpp"
#include "pop/scoring.hpp"
#include "pop/simulator.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// Frozen oracle constants. Each value was computed by an independent
// implementation (closed-form arithmetic or a reference script) and pinned
// here; the engine must reproduce them, not the other way around.
// ---------------------------------------------------------------------------

// mean - population std of [0.68, 0.80, 0.92] with lambda = 1:
// mu = 0.80, sigma = sqrt(0.0096).
inline constexpr double kUwExample = 0.7020204102886728;

// log(2) and log(1 + e^-4), the two SimPO closed-form spot checks.
inline constexpr double kLog2 = 0.6931471805599453;
inline constexpr double kLog1pExpNeg4 = 0.01814992791780978;
// sigmoid(-4): d/dgamma of the second spot check.
inline constexpr double kSigmoidNeg4 = 0.01798620996209156;

// log(4): per-token NLL of the uniform model over a 4-token vocabulary.
inline constexpr double kLog4 = 1.3862943611198906;

// Chi-square critical value, 6 degrees of freedom, alpha = 0.01.
inline constexpr double kChi2Crit6df01 = 16.811893829770927;

// One-sided t critical value, 19 degrees of freedom, alpha = 0.05.
inline constexpr double kTCrit19df05 = 1.7291328115213678;

// Knowledge-transfer fixture (ocr-dumb at 0.1, two peers at 0.8, eta = 0.5,
// T = 3, seed 17): OCR skill of the dumb peer after each iteration, recorded
// from the seeded run as a golden trace.
inline constexpr double kTransferGoldenOcr[4] = {0.10000000000000001, 0.53687853776694783,
                                                 0.76639410619638526, 0.8823339607572378};

// Panel-vs-single fixture (3 judges, judge_noise 0.3, 200 queries, seed 1):
// golden selection qualities.
inline constexpr double kPvsGoldenPanel = 0.95025188227137503;
inline constexpr double kPvsGoldenSingle = 0.92059897467930485;

// ---------------------------------------------------------------------------
// Temp directories
// ---------------------------------------------------------------------------

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pop-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Panel fixtures
// ---------------------------------------------------------------------------

inline pop::Query make_query(const std::string& id = "q1",
                             pop::Category category = pop::Category::GeneralKnowledge,
                             const std::string& prompt = "Where is the car?") {
  pop::Query query;
  query.id = id;
  query.prompt = prompt;
  query.category = category;
  return query;
}

inline pop::Candidate make_candidate(const std::string& query_id, const pop::PeerId& peer,
                                     int sample_index, const std::string& text) {
  pop::Candidate candidate;
  candidate.id = pop::make_candidate_id(query_id, peer, sample_index);
  candidate.query_id = query_id;
  candidate.peer_id = peer;
  candidate.sample_index = sample_index;
  candidate.text = text;
  return candidate;
}

inline pop::PeerHandle make_peer(const std::string& id,
                                 std::shared_ptr<pop::GenerationBackend> backend) {
  pop::PeerHandle peer;
  peer.id = id;
  peer.backend = std::move(backend);
  return peer;
}

// Judge scores serialized exactly as judges are instructed to answer.
inline std::string judge_json(int h, int c, int o, int x, int v) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "{\"Helpfulness\": %d, \"Correctness\": %d, \"Coherence\": %d, "
                "\"Complexity\": %d, \"Verbosity\": %d}",
                h, c, o, x, v);
  return buf;
}

inline pop::ScoreRecord make_vote(const std::string& judge, const std::string& candidate,
                                  double reward, const std::string& query = "q1") {
  pop::ScoreRecord vote;
  vote.judge_id = judge;
  vote.candidate_id = candidate;
  vote.query_id = query;
  vote.reward = reward;
  return vote;
}

// Three peers: ocr-dumb (OCR skill 0.1, rest 0.8) plus two uniform-0.8 peers.
// This is the knowledge-transfer acceptance fixture.
inline std::vector<pop::SyntheticPeer> transfer_peers() {
  pop::SyntheticPeer dumb;
  dumb.id = "ocr-dumb";
  dumb.skills = pop::SkillProfile::uniform(0.8);
  dumb.skills.set(pop::Category::OCR, 0.1);
  dumb.gen_noise = 0.12;
  dumb.judge_noise = 0.2;
  pop::SyntheticPeer a;
  a.id = "peer-a";
  a.skills = pop::SkillProfile::uniform(0.8);
  a.gen_noise = 0.12;
  a.judge_noise = 0.2;
  pop::SyntheticPeer b = a;
  b.id = "peer-b";
  return {dumb, a, b};
}

inline pop::TransferConfig transfer_fixture(uint64_t seed = 17) {
  pop::TransferConfig config;
  config.peers = transfer_peers();
  config.mixture = pop::MixtureSpec::reference_default();
  config.curation.reward_threshold = 0.6;
  config.curation.margin = 0.3;
  config.curation.target_size = 0;
  config.iterations = 3;
  config.queries_per_iteration = 60;
  config.samples_per_member = 8;
  config.eta = 0.5;
  config.seed = seed;
  config.corpus_per_category = 128;
  return config;
}

// Three noisy judges of staggered skill; the panel-vs-single fixture.
inline pop::PanelVsSingleConfig pvs_fixture(uint64_t seed = 1) {
  pop::PanelVsSingleConfig config;
  const double skills[] = {0.55, 0.65, 0.75};
  for (int i = 0; i < 3; ++i) {
    pop::SyntheticPeer judge;
    judge.id = "j" + std::to_string(i + 1);
    judge.skills = pop::SkillProfile::uniform(skills[i]);
    judge.gen_noise = 0.2;
    judge.judge_noise = 0.3;
    config.peers.push_back(std::move(judge));
  }
  config.n_queries = 200;
  config.samples_per_member = 5;
  config.seed = seed;
  return config;
}

}  // namespace testsupport
