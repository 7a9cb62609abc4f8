#include "afl/loop.hpp"

#include <algorithm>

#include "doctest.h"

#include "afl/error.hpp"
#include "afl/rng.hpp"

using namespace afl;

namespace {

// Deterministic environment around a popularity scorer whose counts are
// chosen per test; truth rank is fully controlled.
struct LoopWorld {
  Catalog catalog;
  ScorerArtifact scorer;
  std::unique_ptr<Backend> rec_backend;
  std::unique_ptr<Backend> user_backend;
  LoopEnv env;
  LoopCase test_case;

  // counts[i] scores candidate ids (1-based ranks follow counts descending)
  explicit LoopWorld(const std::vector<std::int64_t>& counts, ItemId truth, int max_epoch) {
    const int n = static_cast<int>(counts.size());
    for (int i = 1; i <= n + 5; ++i) catalog.add({i, "Track " + std::to_string(900 + i)});

    scorer.kind = ScorerKind::Popularity;
    for (int i = 1; i <= n; ++i) scorer.vocab.push_back(i);
    scorer.counts = counts;
    scorer.rebuild_index();

    BackendSpec rec_spec;
    rec_spec.kind = BackendKind::ScriptedRec;
    rec_backend = make_backend(rec_spec);
    BackendSpec user_spec;
    user_spec.kind = BackendKind::OracleUser;
    user_backend = make_backend(user_spec);

    test_case.user = 42;
    test_case.history = {42, {n + 1}, {10}};
    catalog.add({n + 1, "Track " + std::to_string(900 + n + 1)});
    for (int i = 1; i <= n; ++i) test_case.candidates.items.push_back(i);
    test_case.candidates.positive_index =
        static_cast<int>(std::find(test_case.candidates.items.begin(),
                                   test_case.candidates.items.end(), truth) -
                         test_case.candidates.items.begin());
    test_case.truth = truth;

    env.rec_model = &scorer;
    env.reward_model = &scorer;
    env.rec_backend = rec_backend.get();
    env.user_backend = user_backend.get();
    env.templates = default_templates();
    env.nouns = DomainNouns{};
    env.catalog = &catalog;
    env.cfg.max_epoch = max_epoch;
    env.cfg.candidate_size = n;
    env.run_id = "loop-test";
  }
};

// ranks of candidates by (count desc, id asc): counts like {9,8,7...} rank 1..n
std::vector<ItemId> rank_order(const std::vector<std::int64_t>& counts) {
  std::vector<ItemId> ids(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) ids[i] = static_cast<ItemId>(i + 1);
  std::sort(ids.begin(), ids.end(), [&](ItemId a, ItemId b) {
    if (counts[a - 1] != counts[b - 1]) return counts[a - 1] > counts[b - 1];
    return a < b;
  });
  return ids;
}

}  // namespace

TEST_SUITE("loop") {

TEST_CASE("update_memories appends the same triple to both sides") {
  LoopState state;
  RecTurn turn{5, "matches the vibe", std::nullopt};
  Decision rejection{false, "too mellow"};

  update_memories(state, turn, rejection);
  CHECK(state.rec_memory.entries.size() == 1);
  CHECK(state.user_memory.entries.size() == 1);
  CHECK(state.rec_memory.entries[0].round == 1);
  CHECK(state.rejected == std::vector<ItemId>{5});
  CHECK(state.epoch == 2);

  RecTurn turn2{6, "second try", std::nullopt};
  update_memories(state, turn2, rejection);
  CHECK(state.rec_memory.entries[1].round == 2);
  CHECK(state.user_memory.entries[1].round == 2);
  CHECK(state.rec_memory.entries[1].item == state.user_memory.entries[1].item);

  Decision accepted{true, "sold"};
  CHECK_THROWS_AS(update_memories(state, turn, accepted), Error);
}

TEST_CASE("truth at scorer rank 1 is accepted immediately") {
  // ids 1..20 with counts descending: rank i = id i
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;
  LoopWorld w(counts, /*truth=*/1, /*max_epoch=*/4);

  LoopState final_state;
  const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr, &final_state);
  CHECK(outcome.accepted == true);
  CHECK(outcome.iterations_used == 1);
  CHECK(outcome.final_item == 1);
  CHECK(outcome.transcript.size() == 1);
  CHECK(final_state.rec_memory.entries.empty());
  CHECK(final_state.user_memory.entries.empty());
  validate(outcome, 4);
}

TEST_CASE("truth at rank 3 is accepted at iteration 3 with two memories") {
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;
  LoopWorld w(counts, /*truth=*/3, /*max_epoch=*/4);

  LoopState final_state;
  const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr, &final_state);
  CHECK(outcome.accepted == true);
  CHECK(outcome.iterations_used == 3);
  CHECK(outcome.final_item == 3);
  REQUIRE(final_state.rec_memory.entries.size() == 2);
  REQUIRE(final_state.user_memory.entries.size() == 2);
  CHECK(final_state.rec_memory.entries[0].round == 1);
  CHECK(final_state.rec_memory.entries[1].round == 2);
  CHECK(final_state.rec_memory.entries[0].item == 1);
  CHECK(final_state.rec_memory.entries[1].item == 2);
  validate(outcome, 4);
}

TEST_CASE("truth out of reach returns the last recommendation") {
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;
  LoopWorld w(counts, /*truth=*/9, /*max_epoch=*/4);

  const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr);
  CHECK(outcome.accepted == false);
  CHECK(outcome.iterations_used == 4);
  CHECK(outcome.final_item == 4);  // scorer-rank-4 candidate
  validate(outcome, 4);
}

TEST_CASE("model suggestion is computed once and repeated in the transcript") {
  std::vector<std::int64_t> counts(12);
  for (int i = 0; i < 12; ++i) counts[i] = 50 - i;
  LoopWorld w(counts, /*truth=*/7, /*max_epoch=*/5);

  const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr);
  REQUIRE(!outcome.transcript.empty());
  const auto first = outcome.transcript.front().model_item;
  CHECK(first == std::optional<ItemId>{1});
  for (const TurnRecord& turn : outcome.transcript) CHECK(turn.model_item == first);
}

TEST_CASE("acceptance round equals the truth's scorer rank") {
  auto rng = make_rng(4096);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 20;
    std::vector<std::int64_t> counts(n);
    for (auto& c : counts) c = static_cast<std::int64_t>(uniform_below(rng, 40));
    const ItemId truth = 1 + static_cast<ItemId>(uniform_below(rng, n));
    const int max_epoch = 1 + static_cast<int>(uniform_below(rng, n));
    LoopWorld w(counts, truth, max_epoch);

    const auto order = rank_order(counts);
    const int truth_rank =
        1 + static_cast<int>(std::find(order.begin(), order.end(), truth) - order.begin());

    const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr);
    validate(outcome, max_epoch);
    if (truth_rank <= max_epoch) {
      CHECK(outcome.accepted);
      CHECK(outcome.iterations_used == truth_rank);
      CHECK(outcome.final_item == truth);
    } else {
      CHECK(!outcome.accepted);
      CHECK(outcome.iterations_used == max_epoch);
      CHECK(outcome.final_item == order[static_cast<std::size_t>(max_epoch - 1)]);
    }
  }
}

TEST_CASE("transcript records rounds, scores and prompt hashes") {
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;
  LoopWorld w(counts, /*truth=*/2, /*max_epoch=*/4);

  RecordLog log;
  const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, &log);
  CHECK(outcome.iterations_used == 2);

  int chat_records = 0;
  int turn_records = 0;
  int outcome_records = 0;
  for (const auto& record : log.records) {
    const std::string type = record.at("type");
    if (type == "chat") ++chat_records;
    if (type == "turn") ++turn_records;
    if (type == "outcome") ++outcome_records;
  }
  CHECK(chat_records == 4);  // rec + user per round
  CHECK(turn_records == 2);
  CHECK(outcome_records == 1);

  for (const TurnRecord& turn : outcome.transcript) {
    CHECK(!turn.rec_prompt_hash.empty());
    CHECK(!turn.user_prompt_hash.empty());
    REQUIRE(turn.score.has_value());
    CHECK(turn.score->normalized == doctest::Approx(sigmoid(turn.score->raw)));
  }
  // round 1 and round 2 rec prompts differ (memory grew)
  CHECK(outcome.transcript[0].rec_prompt_hash != outcome.transcript[1].rec_prompt_hash);
}

TEST_CASE("ablations drop the matching transcript fields") {
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;

  SUBCASE("without the rec model there is no I_m") {
    LoopWorld w(counts, 1, 4);
    w.env.cfg.use_rec_model = false;
    w.env.view_model = &w.scorer;
    const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr);
    for (const TurnRecord& turn : outcome.transcript) CHECK(!turn.model_item.has_value());
  }
  SUBCASE("without the reward model there is no score") {
    LoopWorld w(counts, 1, 4);
    w.env.cfg.use_reward_model = false;
    const LoopOutcome outcome = run_feedback_loop(w.env, w.test_case, nullptr);
    for (const TurnRecord& turn : outcome.transcript) CHECK(!turn.score.has_value());
  }
}

TEST_CASE("run_many is scheduling-independent") {
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;

  std::vector<LoopWorld> worlds;
  std::vector<LoopCase> cases;
  LoopWorld shared(counts, 1, 4);
  for (int i = 0; i < 24; ++i) {
    LoopCase c = shared.test_case;
    c.user = 100 + i;
    c.truth = 1 + (i % 8);
    c.candidates.positive_index = static_cast<int>(c.truth - 1);
    c.history.user = c.user;
    cases.push_back(c);
  }

  const auto serial = run_many(shared.env, cases, 1);
  const auto parallel = run_many(shared.env, cases, 8);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].user == parallel[i].user);
    CHECK(serial[i].errored == parallel[i].errored);
    CHECK(serial[i].outcome.final_item == parallel[i].outcome.final_item);
    CHECK(serial[i].outcome.iterations_used == parallel[i].outcome.iterations_used);
  }
}

TEST_CASE("loop propagates backend failures as errored cases") {
  std::vector<std::int64_t> counts(20);
  for (int i = 0; i < 20; ++i) counts[i] = 100 - i;
  LoopWorld w(counts, 1, 4);

  BackendSpec replay;
  replay.kind = BackendKind::Replay;
  replay.replay_path = "/nonexistent/supposed.jsonl";
  CHECK_THROWS_AS(make_backend(replay), Error);  // missing file surfaces at construction

  // a replay backend with an empty file misses every key -> errored cases
  const std::string path = "/tmp/afl_empty_transcript.jsonl";
  { std::ofstream out(path); }
  replay.replay_path = path;
  auto empty_replay = make_backend(replay);
  w.env.rec_backend = empty_replay.get();
  const auto results = run_many(w.env, {w.test_case}, 2);
  REQUIRE(results.size() == 1);
  CHECK(results[0].errored);
  CHECK(results[0].error.find("replay") != std::string::npos);
}

}  // TEST_SUITE
