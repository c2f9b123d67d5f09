// Synthetic peers, the simulated panel pipeline, and the two experiments.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <cstring>

#include "doctest.h"
#include "pop/simulator.hpp"
#include "test_support.hpp"

using namespace pop;
using namespace testsupport;

namespace {

SyntheticPeer peer_at(double skill, const std::string& id = "p", double gen_noise = 0.0,
                      double judge_noise = 0.0) {
  SyntheticPeer peer;
  peer.id = id;
  peer.skills = SkillProfile::uniform(skill);
  peer.gen_noise = gen_noise;
  peer.judge_noise = judge_noise;
  return peer;
}

SyntheticCandidate candidate_with_latent(double latent) {
  SyntheticCandidate c;
  c.candidate = make_candidate("q1", "p1", 0, "text");
  c.latent_quality = latent;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

TEST_CASE("noiseless generation reproduces the skill as latent quality") {
  const Query query = make_query("q1", Category::OCR);
  const SyntheticCandidate c = synth_generate(peer_at(0.8), query, 0, 1);
  CHECK(c.latent_quality == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(synth_generate(peer_at(0.0), query, 0, 1).latent_quality == 0.0);
  CHECK(synth_generate(peer_at(1.0), query, 0, 1).latent_quality == 1.0);
}

TEST_CASE("generated candidates carry canonical ids and metadata") {
  const Query query = make_query("q7", Category::Math);
  const SyntheticCandidate c = synth_generate(peer_at(0.5, "peer-x"), query, 3, 9);
  CHECK(c.candidate.id == make_candidate_id("q7", "peer-x", 3));
  CHECK(c.candidate.query_id == "q7");
  CHECK(c.candidate.peer_id == "peer-x");
  CHECK(c.candidate.sample_index == 3);
  CHECK_FALSE(c.candidate.text.empty());
}

TEST_CASE("seeded generation repeats identically and varies with the seed") {
  const Query query = make_query();
  const SyntheticPeer peer = peer_at(0.5, "p", 0.3);
  const double a = synth_generate(peer, query, 0, 42).latent_quality;
  const double b = synth_generate(peer, query, 0, 42).latent_quality;
  const double c = synth_generate(peer, query, 0, 43).latent_quality;
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("noisy latents stay clamped to [0,1]") {
  const Query query = make_query();
  const SyntheticPeer wild = peer_at(0.5, "w", 5.0);
  for (int i = 0; i < 200; ++i) {
    const double latent = synth_generate(wild, query, i, 7).latent_quality;
    CHECK(latent >= 0.0);
    CHECK(latent <= 1.0);
  }
}

// ---------------------------------------------------------------------------
// Judging
// ---------------------------------------------------------------------------

TEST_CASE("noiseless judging quantizes the latent through the Likert pathway") {
  const SyntheticPeer judge = peer_at(0.9, "judge");
  const JudgeScores top = synth_judge(judge, candidate_with_latent(1.0), Category::OCR, 1);
  CHECK(top == JudgeScores{5, 5, 5, 5, 5});
  CHECK(normalize(top) == 1.0);

  const JudgeScores floor = synth_judge(judge, candidate_with_latent(0.2), Category::OCR, 1);
  CHECK(floor == JudgeScores{1, 1, 1, 1, 1});
  CHECK(normalize(floor) == doctest::Approx(0.2));

  // 0.68 * 25 = 17 = 3*5 + 2: base 3 with two axes bumped.
  const JudgeScores mid = synth_judge(judge, candidate_with_latent(0.68), Category::OCR, 1);
  CHECK(mid.sum() == 17);
  CHECK(normalize(mid) == doctest::Approx(0.68).epsilon(1e-12));
}

TEST_CASE("observed rewards are always multiples of 0.04 within [0.2, 1.0]") {
  const SyntheticPeer judge = peer_at(0.4, "judge", 0.0, 0.5);
  for (int i = 0; i < 300; ++i) {
    const JudgeScores scores =
        synth_judge(judge, candidate_with_latent(0.1 + 0.003 * i), Category::Math,
                    static_cast<uint64_t>(i));
    const double reward = normalize(scores);
    CHECK(reward >= 0.2);
    CHECK(reward <= 1.0);
    const double steps = reward / 0.04;
    CHECK(std::abs(steps - std::round(steps)) < 1e-9);
  }
}

TEST_CASE("judge noise shrinks as judge skill grows") {
  // With skill 1.0 the noise term vanishes: observation equals the latent.
  const SyntheticPeer perfect = peer_at(1.0, "sharp", 0.0, 0.8);
  const JudgeScores scores = synth_judge(perfect, candidate_with_latent(0.68), Category::OCR, 5);
  CHECK(normalize(scores) == doctest::Approx(0.68).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Skill updates
// ---------------------------------------------------------------------------

TEST_CASE("eta=0 leaves skills unchanged") {
  const SyntheticPeer peer = peer_at(0.3);
  const std::vector<CuratedSignal> signals = {{Category::OCR, 0.9}};
  const SyntheticPeer updated = apply_update(peer, signals, 0.0);
  CHECK(updated.skills.get(Category::OCR) == doctest::Approx(0.3));
}

TEST_CASE("eta=1 jumps straight to the signal quality") {
  const SyntheticPeer peer = peer_at(0.3);
  const std::vector<CuratedSignal> signals = {{Category::Math, 0.75}};
  const SyntheticPeer updated = apply_update(peer, signals, 1.0);
  CHECK(updated.skills.get(Category::Math) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("eta=0.5 from 0.1 toward 0.8 lands on 0.45") {
  SyntheticPeer peer = peer_at(0.8);
  peer.skills.set(Category::OCR, 0.1);
  const std::vector<CuratedSignal> signals = {{Category::OCR, 0.8}};
  const SyntheticPeer updated = apply_update(peer, signals, 0.5);
  CHECK(updated.skills.get(Category::OCR) == doctest::Approx(0.45).epsilon(1e-12));
}

TEST_CASE("signals average per category and untouched categories stay put") {
  SyntheticPeer peer = peer_at(0.5);
  const std::vector<CuratedSignal> signals = {
      {Category::OCR, 0.9}, {Category::OCR, 0.7}, {Category::Math, 1.0}};
  const SyntheticPeer updated = apply_update(peer, signals, 0.5);
  // OCR pulls toward mean(0.9, 0.7) = 0.8 -> 0.65.
  CHECK(updated.skills.get(Category::OCR) == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(updated.skills.get(Category::Math) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(updated.skills.get(Category::Code) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("skills remain in [0,1] for eta in [0,1] under extreme signals") {
  for (double eta : {0.0, 0.25, 0.5, 1.0}) {
    for (double start : {0.0, 0.5, 1.0}) {
      for (double signal : {0.0, 1.0}) {
        const std::vector<CuratedSignal> signals = {{Category::Counting, signal}};
        const SyntheticPeer updated = apply_update(peer_at(start), signals, eta);
        CHECK(updated.skills.get(Category::Counting) >= 0.0);
        CHECK(updated.skills.get(Category::Counting) <= 1.0);
      }
    }
  }
}

TEST_CASE("skill profiles validate their bounds") {
  SkillProfile bad = SkillProfile::uniform(0.5);
  bad.set(Category::Code, 1.5);
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
  }
}

// ---------------------------------------------------------------------------
// Synthetic panel pipeline
// ---------------------------------------------------------------------------

TEST_CASE("a noiseless mixed-skill panel selects the strongest peer's answer") {
  SyntheticPanelConfig panel;
  panel.peers = {peer_at(0.3, "weak"), peer_at(0.9, "strong"), peer_at(0.6, "mid")};
  panel.samples_per_member = 2;
  CurationConfig curation;
  curation.reward_threshold = 0.6;
  curation.margin = 0.3;
  const SyntheticQueryResult result =
      run_synthetic_query(panel, make_query(), curation, 1, 3);
  REQUIRE(result.outcome.accepted());
  CHECK(result.outcome.pair->chosen_provenance.peer_id == "strong");
  CHECK(result.outcome.pair->rejected_provenance.peer_id == "weak");
  CHECK(result.best_latent == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(result.chosen_latent == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("serial and parallel query batches are bit-identical") {
  SyntheticPanelConfig panel;
  panel.peers = {peer_at(0.4, "a", 0.15, 0.25), peer_at(0.7, "b", 0.15, 0.25),
                 peer_at(0.9, "c", 0.15, 0.25)};
  panel.samples_per_member = 4;
  CurationConfig curation;
  curation.reward_threshold = 0.5;
  curation.margin = 0.2;
  std::vector<Query> queries;
  for (int i = 0; i < 40; ++i) {
    queries.push_back(make_query("q" + std::to_string(i),
                                 kAllCategories[i % kAllCategories.size()], "p"));
  }
  const auto serial = run_synthetic_queries_serial(panel, queries, curation, 2, 99);
  const auto parallel = run_synthetic_queries_parallel(panel, queries, curation, 2, 99, 4);
  REQUIRE(serial.size() == parallel.size());
  for (size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].best_latent == parallel[i].best_latent);
    CHECK(serial[i].chosen_latent == parallel[i].chosen_latent);
    CHECK(serial[i].outcome.accepted() == parallel[i].outcome.accepted());
    CHECK(serial[i].latents == parallel[i].latents);
    REQUIRE(serial[i].scores.size() == parallel[i].scores.size());
    for (size_t k = 0; k < serial[i].scores.size(); ++k) {
      CHECK(serial[i].scores[k].reward == parallel[i].scores[k].reward);
      CHECK(serial[i].scores[k].judge_id == parallel[i].scores[k].judge_id);
    }
  }
}

TEST_CASE("synthetic corpus covers every category evenly") {
  const std::vector<Query> corpus = make_synthetic_corpus(16, 5);
  CHECK(corpus.size() == 16 * kAllCategories.size());
  std::map<Category, size_t> counts;
  for (const Query& q : corpus) counts[q.category]++;
  for (Category c : kAllCategories) CHECK(counts[c] == 16);
  // Distinct seeds produce distinct query text (nonce embedded).
  const std::vector<Query> other = make_synthetic_corpus(16, 6);
  CHECK(corpus[0].prompt != other[0].prompt);
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

TEST_CASE("zero-noise equal-skill panels are a fixed point of the loop") {
  TransferConfig config;
  config.peers = {peer_at(1.0, "p1"), peer_at(1.0, "p2"), peer_at(1.0, "p3")};
  config.mixture = MixtureSpec::reference_default();
  config.iterations = 2;
  config.queries_per_iteration = 20;
  config.samples_per_member = 4;
  config.seed = 5;
  config.corpus_per_category = 64;
  const TransferReport report = run_transfer_experiment(config);
  for (const CurationStats& stats : report.per_iteration_stats) {
    CHECK(stats.accepted == 0);  // all rewards equal: no margin is ever met
  }
  for (const auto& snapshot : report.per_iteration_skills) {
    for (const SkillProfile& skills : snapshot) {
      for (Category c : kAllCategories) CHECK(skills.get(c) == 1.0);
    }
  }
}

TEST_CASE("transfer fixture reproduces the golden OCR trajectory") {
  const TransferReport report = run_transfer_experiment(transfer_fixture(17));
  REQUIRE(report.per_iteration_skills.size() == 4);  // initial + 3 iterations
  REQUIRE(report.peer_ids[0] == "ocr-dumb");
  for (size_t t = 0; t < 4; ++t) {
    CHECK(report.per_iteration_skills[t][0].get(Category::OCR) ==
          doctest::Approx(kTransferGoldenOcr[t]).epsilon(1e-12));
  }
}

TEST_CASE("transfer runs are bit-reproducible") {
  const TransferReport a = run_transfer_experiment(transfer_fixture(31));
  const TransferReport b = run_transfer_experiment(transfer_fixture(31));
  CHECK(a.config_hash == b.config_hash);
  REQUIRE(a.per_iteration_skills.size() == b.per_iteration_skills.size());
  for (size_t t = 0; t < a.per_iteration_skills.size(); ++t) {
    for (size_t p = 0; p < a.per_iteration_skills[t].size(); ++p) {
      for (Category c : kAllCategories) {
        CHECK(a.per_iteration_skills[t][p].get(c) == b.per_iteration_skills[t][p].get(c));
      }
    }
  }
}

TEST_CASE("zero mixture weight on OCR freezes OCR skill") {
  TransferConfig config = transfer_fixture(13);
  MixtureSpec no_ocr;
  // Shift OCR's weight onto GeneralKnowledge; everything else as in the reference.
  no_ocr.weights = config.mixture.weights;
  no_ocr.weights[Category::GeneralKnowledge] += no_ocr.weights[Category::OCR];
  no_ocr.weights[Category::OCR] = 0.0;
  config.mixture = no_ocr;
  const TransferReport report = run_transfer_experiment(config);
  for (const auto& snapshot : report.per_iteration_skills) {
    CHECK(snapshot[0].get(Category::OCR) == doctest::Approx(0.1).epsilon(1e-15));
  }
}

TEST_CASE("noiseless judging makes panel and single-judge selection identical") {
  PanelVsSingleConfig config;
  config.peers = {peer_at(0.5, "a", 0.2, 0.0), peer_at(0.7, "b", 0.2, 0.0),
                  peer_at(0.9, "c", 0.2, 0.0)};
  config.n_queries = 50;
  config.samples_per_member = 4;
  config.seed = 3;
  const PanelVsSingleResult result = run_panel_vs_single(config);
  CHECK(result.panel_selection_quality ==
        doctest::Approx(result.mean_single_judge_quality).epsilon(1e-12));
}

TEST_CASE("a single-member roster is rejected: there is no panel to compare") {
  PanelVsSingleConfig config;
  config.peers = {peer_at(0.6, "solo", 0.2, 0.4)};
  config.n_queries = 40;
  config.samples_per_member = 5;
  config.seed = 8;
  try {
    run_panel_vs_single(config);
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
  }
}

TEST_CASE("panel-vs-single fixture reproduces its golden qualities") {
  const PanelVsSingleResult result = run_panel_vs_single(pvs_fixture(1));
  CHECK(result.panel_selection_quality == doctest::Approx(kPvsGoldenPanel).epsilon(1e-12));
  CHECK(result.mean_single_judge_quality == doctest::Approx(kPvsGoldenSingle).epsilon(1e-12));
}
