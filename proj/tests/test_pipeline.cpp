// Stage kernels: the judge fan-out, stage-level aggregation, pool assembly,
// and a scripted end-to-end run from queries to an accepted preference pair.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pop/curation.hpp"
#include "pop/pipeline.hpp"
#include "test_support.hpp"

using namespace pop;
using namespace testsupport;

namespace {

// Two queries, three candidates (q2 has only one), two scripted judges that
// key their verdicts off the candidate text embedded in the judge prompt.
struct AbsoluteFixture {
  std::vector<Query> queries;
  std::vector<Candidate> candidates;
  std::vector<PeerHandle> judges;

  AbsoluteFixture() {
    queries = {make_query("q1", Category::GeneralKnowledge, "What is in the pantry?"),
               make_query("q2", Category::GeneralKnowledge, "Describe the dessert.")};
    candidates = {make_candidate("q1", "p1", 0, "a jar of apple preserve"),
                  make_candidate("q1", "p2", 0, "two loaves of banana bread"),
                  make_candidate("q2", "p1", 0, "a slice of cherry cake")};
    judges.push_back(make_peer(
        "j1", std::make_shared<ScriptedBackend>(std::map<std::string, std::string>{
                  {"a jar of apple preserve", judge_json(5, 5, 5, 5, 5)},
                  {"two loaves of banana bread", judge_json(3, 3, 3, 3, 3)},
                  {"a slice of cherry cake", judge_json(4, 4, 4, 4, 4)}})));
    judges.push_back(make_peer(
        "j2", std::make_shared<ScriptedBackend>(std::map<std::string, std::string>{
                  {"a jar of apple preserve", judge_json(4, 5, 4, 3, 4)},
                  {"two loaves of banana bread", judge_json(2, 3, 3, 3, 1)},
                  {"a slice of cherry cake", judge_json(4, 5, 3, 2, 3)}})));
  }
};

bool same_record(const ScoreRecord& a, const ScoreRecord& b) {
  return a.judge_id == b.judge_id && a.candidate_id == b.candidate_id &&
         a.query_id == b.query_id && a.scores == b.scores && a.reward == b.reward;
}

}  // namespace

TEST_CASE("judge_all fans every judge over every candidate in canonical order") {
  AbsoluteFixture fx;
  JudgeStageOptions options;
  options.seed = 7;
  const JudgeStageResult result =
      judge_all_serial(fx.judges, fx.queries, fx.candidates, options);

  REQUIRE(result.scores.size() == 6);  // 3 candidates x 2 judges
  CHECK(result.dropped_votes == 0);
  CHECK(result.verdicts.empty());

  // Order is (query, candidate, judge).
  const std::vector<std::pair<std::string, std::string>> expected = {
      {"q1#p1#0", "j1"}, {"q1#p1#0", "j2"}, {"q1#p2#0", "j1"},
      {"q1#p2#0", "j2"}, {"q2#p1#0", "j1"}, {"q2#p1#0", "j2"},
  };
  for (size_t i = 0; i < expected.size(); ++i) {
    CAPTURE(i);
    CHECK(result.scores[i].candidate_id == expected[i].first);
    CHECK(result.scores[i].judge_id == expected[i].second);
  }

  // Rewards are the normalized five-axis sums of the scripted verdicts.
  CHECK(result.scores[0].reward == doctest::Approx(1.0));        // 25/25
  CHECK(result.scores[1].reward == doctest::Approx(20.0 / 25));  // 4+5+4+3+4
  CHECK(result.scores[2].reward == doctest::Approx(15.0 / 25));
  CHECK(result.scores[3].reward == doctest::Approx(12.0 / 25));
  CHECK(result.scores[4].reward == doctest::Approx(20.0 / 25));
  CHECK(result.scores[5].reward == doctest::Approx(17.0 / 25));
  CHECK(result.scores[0].query_id == "q1");
  CHECK(result.scores[4].query_id == "q2");
}

TEST_CASE("parallel judging is bit-identical to the serial reference") {
  AbsoluteFixture fx;
  JudgeStageOptions options;
  options.seed = 99;
  const JudgeStageResult serial =
      judge_all_serial(fx.judges, fx.queries, fx.candidates, options);
  for (int threads : {2, 4, 8}) {
    CAPTURE(threads);
    const JudgeStageResult parallel =
        judge_all_parallel(fx.judges, fx.queries, fx.candidates, options, threads);
    REQUIRE(parallel.scores.size() == serial.scores.size());
    CHECK(parallel.dropped_votes == serial.dropped_votes);
    for (size_t i = 0; i < serial.scores.size(); ++i) {
      CAPTURE(i);
      CHECK(same_record(serial.scores[i], parallel.scores[i]));
    }
  }
  // threads == 1 through the dispatcher selects the serial path.
  const JudgeStageResult one = judge_all(fx.judges, fx.queries, fx.candidates, options, 1);
  REQUIRE(one.scores.size() == serial.scores.size());
  for (size_t i = 0; i < serial.scores.size(); ++i) {
    CHECK(same_record(one.scores[i], serial.scores[i]));
  }
}

TEST_CASE("include_self_eval=false removes judge-own-candidate tasks") {
  // Judges share ids with the candidate owners, as in a real peer panel.
  std::vector<Query> queries = {make_query("q1")};
  std::vector<Candidate> candidates = {make_candidate("q1", "p1", 0, "from the first peer"),
                                       make_candidate("q1", "p2", 0, "from the second peer")};
  auto table = std::map<std::string, std::string>{
      {"from the first peer", judge_json(5, 5, 5, 5, 5)},
      {"from the second peer", judge_json(3, 3, 3, 3, 3)}};
  std::vector<PeerHandle> judges = {make_peer("p1", std::make_shared<ScriptedBackend>(table)),
                                    make_peer("p2", std::make_shared<ScriptedBackend>(table))};

  JudgeStageOptions options;
  const JudgeStageResult with_self = judge_all_serial(judges, queries, candidates, options);
  CHECK(with_self.scores.size() == 4);

  options.include_self_eval = false;
  const JudgeStageResult without = judge_all_serial(judges, queries, candidates, options);
  REQUIRE(without.scores.size() == 2);
  for (const ScoreRecord& record : without.scores) {
    // The only remaining votes are cross votes.
    const std::string owner = record.candidate_id.substr(3, 2);  // "q1#p1#0" -> "p1"
    CHECK(record.judge_id != owner);
  }
}

TEST_CASE("a judge that never emits JSON is absorbed as dropped votes") {
  AbsoluteFixture fx;
  // Replace j2 with a judge that talks prose on every attempt (retry included).
  fx.judges[1] = make_peer("j2", ScriptedBackend::fixed("I would rather describe my feelings."));
  JudgeStageOptions options;
  const JudgeStageResult result =
      judge_all_serial(fx.judges, fx.queries, fx.candidates, options);
  CHECK(result.scores.size() == 3);   // j1 still voted on everything
  CHECK(result.dropped_votes == 3);   // one lost vote per candidate
  for (const ScoreRecord& record : result.scores) CHECK(record.judge_id == "j1");
}

TEST_CASE("a judge whose backend errors outright is also just a lost vote") {
  AbsoluteFixture fx;
  // Empty table: every lookup misses and the backend raises EmptyCompletion.
  fx.judges[0] = make_peer("j1", std::make_shared<ScriptedBackend>(
                                     std::map<std::string, std::string>{}));
  JudgeStageOptions options;
  const JudgeStageResult result =
      judge_all_serial(fx.judges, fx.queries, fx.candidates, options);
  CHECK(result.scores.size() == 3);
  CHECK(result.dropped_votes == 3);
}

TEST_CASE("relative mode produces one verdict per judge per rankable query") {
  AbsoluteFixture fx;
  // Fixed verdict: whatever the presentation order, rank label A above B.
  fx.judges[0] = make_peer("j1", ScriptedBackend::fixed("{\"ranking\": [\"A\", \"B\"]}"));
  fx.judges[1] = make_peer("j2", ScriptedBackend::fixed("{\"ranking\": [\"B\", \"A\"]}"));

  JudgeStageOptions options;
  options.scoring_mode = ScoringMode::relative;
  options.seed = 5;
  const JudgeStageResult result =
      judge_all_serial(fx.judges, fx.queries, fx.candidates, options);

  // q2 has a single candidate: nothing to rank. q1 yields one verdict per judge.
  CHECK(result.scores.empty());
  REQUIRE(result.verdicts.size() == 2);
  const std::set<std::string> q1_ids = {"q1#p1#0", "q1#p2#0"};
  for (const RelativeVerdict& verdict : result.verdicts) {
    REQUIRE(verdict.ranking.size() == 2);
    CHECK(q1_ids.count(verdict.ranking[0]) == 1);
    CHECK(q1_ids.count(verdict.ranking[1]) == 1);
    CHECK(verdict.ranking[0] != verdict.ranking[1]);
  }
  CHECK(result.verdicts[0].judge_id == "j1");
  CHECK(result.verdicts[1].judge_id == "j2");

  // Relative judging is deterministic under a fixed seed and thread count.
  const JudgeStageResult again =
      judge_all_parallel(fx.judges, fx.queries, fx.candidates, options, 4);
  REQUIRE(again.verdicts.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(again.verdicts[i].ranking == result.verdicts[i].ranking);
  }
}

TEST_CASE("aggregate_stage groups votes per candidate and reports the voted set") {
  std::vector<Candidate> candidates = {make_candidate("q1", "p1", 0, "a"),
                                       make_candidate("q1", "p2", 0, "b"),
                                       make_candidate("q1", "p2", 1, "c")};
  std::vector<ScoreRecord> scores = {
      make_vote("j1", "q1#p1#0", 1.0), make_vote("j2", "q1#p1#0", 0.6),
      make_vote("j1", "q1#p2#0", 0.2),
      // q1#p2#1 got no votes at all (both judges failed on it).
  };

  AggregatorConfig config;  // mean
  std::set<std::string> voted;
  const std::vector<AggregatedReward> rewards =
      aggregate_stage(scores, candidates, config, &voted);

  REQUIRE(rewards.size() == 2);
  CHECK(rewards[0].candidate_id == "q1#p1#0");
  CHECK(rewards[0].value == doctest::Approx(0.8));
  CHECK(rewards[0].n_votes == 2);
  CHECK(rewards[1].candidate_id == "q1#p2#0");
  CHECK(rewards[1].value == doctest::Approx(0.2));
  CHECK(voted == std::set<std::string>{"q1#p1#0", "q1#p2#0"});
}

TEST_CASE("aggregate_stage can exclude self votes using candidate ownership") {
  std::vector<Candidate> candidates = {make_candidate("q1", "j1", 0, "self-owned")};
  std::vector<ScoreRecord> scores = {make_vote("j1", "q1#j1#0", 1.0),
                                     make_vote("j2", "q1#j1#0", 0.5)};
  AggregatorConfig config;
  config.exclude_self_eval = true;
  const std::vector<AggregatedReward> rewards = aggregate_stage(scores, candidates, config);
  REQUIRE(rewards.size() == 1);
  CHECK(rewards[0].value == doctest::Approx(0.5));  // j1's own vote removed
  CHECK(rewards[0].n_votes == 1);
}

TEST_CASE("aggregate_relative_stage averages rank-derived rewards per query") {
  std::vector<Candidate> candidates = {make_candidate("q1", "p1", 0, "a"),
                                       make_candidate("q1", "p2", 0, "b"),
                                       make_candidate("q2", "p1", 0, "d"),
                                       make_candidate("q2", "p2", 0, "e")};
  RelativeVerdict v1;
  v1.judge_id = "j1";
  v1.ranking = {"q1#p1#0", "q1#p2#0"};
  RelativeVerdict v2;
  v2.judge_id = "j2";
  v2.ranking = {"q1#p2#0", "q1#p1#0"};
  RelativeVerdict v3;
  v3.judge_id = "j1";
  v3.ranking = {"q2#p1#0", "q2#p2#0"};

  std::set<std::string> voted;
  const std::vector<AggregatedReward> rewards = aggregate_relative_stage(
      std::vector<RelativeVerdict>{v1, v2, v3}, candidates, &voted);

  REQUIRE(rewards.size() == 4);
  // q1: the judges disagree head-to-head, so both candidates average 0.5.
  CHECK(rewards[0].candidate_id == "q1#p1#0");
  CHECK(rewards[0].value == doctest::Approx(0.5));
  CHECK(rewards[0].n_votes == 2);
  CHECK(rewards[0].vote_std == doctest::Approx(0.5));
  CHECK(rewards[1].value == doctest::Approx(0.5));
  // q2: a single unanimous verdict, top gets 1, bottom gets 0.
  CHECK(rewards[2].candidate_id == "q2#p1#0");
  CHECK(rewards[2].value == doctest::Approx(1.0));
  CHECK(rewards[3].value == doctest::Approx(0.0));
  CHECK(rewards[2].n_votes == 1);
  CHECK(voted.size() == 4);
}

TEST_CASE("a verdict naming an unknown candidate is an inconsistent set") {
  std::vector<Candidate> candidates = {make_candidate("q1", "p1", 0, "a"),
                                       make_candidate("q1", "p2", 0, "b")};
  RelativeVerdict verdict;
  verdict.judge_id = "j1";
  verdict.ranking = {"q9#zz#0", "q1#p1#0"};
  try {
    aggregate_relative_stage(std::vector<RelativeVerdict>{verdict}, candidates);
    FAIL("expected InconsistentCandidateSets");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InconsistentCandidateSets);
  }
}

TEST_CASE("pool_stage emits one pool per query, in query order, ids attached") {
  std::vector<Query> queries = {make_query("q1"), make_query("q2"), make_query("q3")};
  // Jumbled candidate order; q3 has no candidates at all.
  std::vector<Candidate> candidates = {make_candidate("q2", "p2", 0, "q2 late peer"),
                                       make_candidate("q1", "p2", 1, "q1 second sample"),
                                       make_candidate("q1", "p1", 0, "q1 first peer"),
                                       make_candidate("q1", "p2", 0, "q1 first sample"),
                                       make_candidate("q2", "p1", 0, "q2 early peer")};
  std::vector<AggregatedReward> rewards;
  for (const Candidate& candidate : candidates) {
    AggregatedReward reward;
    reward.candidate_id = candidate.id;
    reward.query_id = candidate.query_id;
    reward.value = 0.5;
    reward.n_votes = 1;
    rewards.push_back(reward);
  }
  const std::map<PeerId, int> member_order = {{"p1", 0}, {"p2", 1}};

  const std::vector<CandidatePool> pools =
      pool_stage(queries, candidates, rewards, PanelMode::multi_try, member_order);

  REQUIRE(pools.size() == 3);
  CHECK(pools[0].query_id == "q1");
  CHECK(pools[1].query_id == "q2");
  CHECK(pools[2].query_id == "q3");
  CHECK(pools[2].entries.empty());

  // Canonical (member order, sample_index) order inside each pool.
  REQUIRE(pools[0].entries.size() == 3);
  CHECK(pools[0].entries[0].candidate.id == "q1#p1#0");
  CHECK(pools[0].entries[1].candidate.id == "q1#p2#0");
  CHECK(pools[0].entries[2].candidate.id == "q1#p2#1");
  REQUIRE(pools[1].entries.size() == 2);
  CHECK(pools[1].entries[0].candidate.id == "q2#p1#0");
  CHECK(pools[1].entries[1].candidate.id == "q2#p2#0");
}

TEST_CASE("pool_stage drops unvoted candidates via the voted set") {
  std::vector<Query> queries = {make_query("q1")};
  std::vector<Candidate> candidates = {make_candidate("q1", "p1", 0, "kept"),
                                       make_candidate("q1", "p1", 1, "all votes lost")};
  std::vector<AggregatedReward> rewards;
  AggregatedReward reward;
  reward.candidate_id = "q1#p1#0";
  reward.query_id = "q1";
  reward.value = 0.9;
  reward.n_votes = 2;
  rewards.push_back(reward);
  const std::set<std::string> voted = {"q1#p1#0"};
  const std::map<PeerId, int> member_order = {{"p1", 0}};

  const std::vector<CandidatePool> pools =
      pool_stage(queries, candidates, rewards, PanelMode::multi_try, member_order, &voted);
  REQUIRE(pools.size() == 1);
  REQUIRE(pools[0].entries.size() == 1);
  CHECK(pools[0].entries[0].candidate.id == "q1#p1#0");
  CHECK(pools[0].excluded_no_votes == 1);
}

TEST_CASE("scripted end-to-end: generate, judge, aggregate, pool, curate") {
  std::vector<Query> queries = {make_query("q1", Category::Math, "What is two plus two?"),
                                make_query("q2", Category::GeneralKnowledge, "Name a fruit.")};

  // Two generating peers with fixed answers per prompt.
  PanelConfig panel;
  panel.members = {
      make_peer("p1", std::make_shared<ScriptedBackend>(std::map<std::string, std::string>{
                          {"What is two plus two?", "the sum equals four"},
                          {"Name a fruit.", "a ripe banana"}})),
      make_peer("p2", std::make_shared<ScriptedBackend>(std::map<std::string, std::string>{
                          {"What is two plus two?", "the sum equals five"},
                          {"Name a fruit.", "a fresh tomato"}})),
  };
  panel.samples_per_member = 1;
  panel.seed = 11;

  std::vector<Candidate> candidates;
  for (const Query& query : queries) {
    const GenerationResult generated = generate_candidates(panel, query);
    REQUIRE(generated.failures.empty());
    candidates.insert(candidates.end(), generated.candidates.begin(),
                      generated.candidates.end());
  }
  REQUIRE(candidates.size() == 4);

  // Two dedicated judges keyed off the candidate texts.
  std::vector<PeerHandle> judges = {
      make_peer("j1", std::make_shared<ScriptedBackend>(std::map<std::string, std::string>{
                          {"the sum equals four", judge_json(5, 5, 4, 3, 4)},
                          {"the sum equals five", judge_json(2, 1, 3, 2, 3)},
                          {"a ripe banana", judge_json(5, 4, 4, 3, 4)},
                          {"a fresh tomato", judge_json(2, 2, 2, 2, 2)}})),
      make_peer("j2", std::make_shared<ScriptedBackend>(std::map<std::string, std::string>{
                          {"the sum equals four", judge_json(5, 4, 4, 4, 4)},
                          {"the sum equals five", judge_json(2, 2, 3, 2, 2)},
                          {"a ripe banana", judge_json(4, 4, 4, 4, 4)},
                          {"a fresh tomato", judge_json(3, 2, 2, 2, 2)}})),
  };

  JudgeStageOptions judge_options;
  judge_options.seed = 13;
  const JudgeStageResult judged = judge_all(judges, queries, candidates, judge_options, 2);
  REQUIRE(judged.scores.size() == 8);
  CHECK(judged.dropped_votes == 0);

  AggregatorConfig aggregator;  // mean over both judges
  std::set<std::string> voted;
  const std::vector<AggregatedReward> rewards =
      aggregate_stage(judged.scores, candidates, aggregator, &voted);
  REQUIRE(rewards.size() == 4);

  const std::vector<CandidatePool> pools = pool_stage(
      queries, candidates, rewards, PanelMode::multi_try, panel.member_order(), &voted);
  REQUIRE(pools.size() == 2);

  // Best-of-N picks the strong answers.
  CHECK(best_of_n(pools[0]).candidate.text == "the sum equals four");
  CHECK(best_of_n(pools[1]).candidate.text == "a ripe banana");
  // j1: 21/25, j2: 21/25 -> mean 0.84.
  CHECK(best_of_n(pools[0]).reward.value == doctest::Approx(0.84));

  // Curation accepts the math pair: chosen 0.84 over rejected 0.44.
  CurationConfig curation;
  curation.reward_threshold = 0.8;
  curation.margin = 0.3;
  const PairOutcome outcome = select_pair(pools[0], curation, queries[0], 1);
  REQUIRE(outcome.accepted());
  CHECK(outcome.pair->chosen == "the sum equals four");
  CHECK(outcome.pair->rejected == "the sum equals five");
  CHECK(outcome.pair->chosen_reward == doctest::Approx(0.84));
  CHECK(outcome.pair->rejected_reward == doctest::Approx(0.44));
  CHECK(outcome.pair->chosen_provenance.peer_id == "p1");
  CHECK(outcome.pair->rejected_provenance.peer_id == "p2");

  // The fruit pool also passes (banana 0.80 sits exactly on the threshold,
  // tomato 0.42 leaves a 0.38 margin), so the whole run yields two pairs.
  CurationStats stats;
  std::map<std::string, Query> query_index;
  for (const Query& query : queries) query_index[query.id] = query;
  const PreferenceDataset dataset =
      build_dataset(pools, curation, query_index, 1, &stats);
  CHECK(dataset.pairs.size() == 2);
  CHECK(stats.accepted == 2);
  CHECK(stats.pools == 2);
  CHECK(stats.accepted_by_category.at(Category::Math) == 1);
  CHECK(stats.accepted_by_category.at(Category::GeneralKnowledge) == 1);
}
