#include "afl/domain.hpp"

#include "doctest.h"

#include "afl/error.hpp"
#include "afl/rng.hpp"

using namespace afl;

namespace {

Catalog small_catalog(int n) {
  Catalog catalog;
  for (int i = 1; i <= n; ++i) catalog.add({i, "Artist " + std::to_string(1000 + i)});
  return catalog;
}

}  // namespace

TEST_SUITE("domain") {

TEST_CASE("catalog rejects unknown ids and empty titles") {
  Catalog catalog = small_catalog(3);
  CHECK(catalog.contains(2));
  CHECK(catalog.title_of(2) == "Artist 1002");
  CHECK_THROWS_AS(catalog.at(99), Error);
  CHECK_THROWS_AS(catalog.add({4, ""}), Error);
}

TEST_CASE("user sequence invariants") {
  UserSequence seq{7, {1, 2, 3}, {10, 20, 30}};
  CHECK_NOTHROW(validate(seq));

  UserSequence unsorted{7, {1, 2}, {20, 10}};
  CHECK_THROWS_AS(validate(unsorted), Error);

  UserSequence empty{7, {}, {}};
  CHECK_THROWS_AS(validate(empty), Error);

  UserSequence negative{7, {1}, {-5}};
  CHECK_THROWS_AS(validate(negative), Error);
}

TEST_CASE("candidate list invariants") {
  CandidateList list;
  for (int i = 1; i <= 20; ++i) list.items.push_back(i);
  list.positive_index = 4;
  list.policy = OrderingPolicy::Random;
  CHECK_NOTHROW(validate(list, 20));
  CHECK(list.positive() == 5);
  CHECK(list.contains(20));
  CHECK(!list.contains(21));

  SUBCASE("duplicates rejected") {
    list.items[3] = list.items[2];
    CHECK_THROWS_AS(validate(list, 20), Error);
  }
  SUBCASE("policy placement enforced") {
    list.policy = OrderingPolicy::First;
    CHECK_THROWS_AS(validate(list, 20), Error);
    list.positive_index = 0;
    CHECK_NOTHROW(validate(list, 20));
    list.policy = OrderingPolicy::Last;
    CHECK_THROWS_AS(validate(list, 20), Error);
    list.positive_index = 19;
    CHECK_NOTHROW(validate(list, 20));
  }
  SUBCASE("size enforced") { CHECK_THROWS_AS(validate(list, 19), Error); }
}

TEST_CASE("agent memory is append-only with increasing rounds") {
  AgentMemory memory{MemoryOwner::Recommendation, {}};
  memory.append({1, 5, "too mellow", "wanted something louder"});
  memory.append({2, 6, "try this", "still not it"});
  CHECK(memory.entries.size() == 2);
  CHECK_THROWS_AS(memory.append({2, 7, "again", "no"}), Error);
  CHECK_THROWS_AS(memory.append({3, 7, "", "no"}), Error);
}

TEST_CASE("loop outcome consistency") {
  LoopOutcome outcome;
  TurnRecord t1;
  t1.round = 1;
  t1.item = 11;
  t1.accepted = false;
  TurnRecord t2;
  t2.round = 2;
  t2.item = 12;
  t2.accepted = true;
  outcome.transcript = {t1, t2};
  outcome.final_item = 12;
  outcome.accepted = true;
  outcome.iterations_used = 2;
  CHECK_NOTHROW(validate(outcome, 4));

  outcome.final_item = 11;
  CHECK_THROWS_AS(validate(outcome, 4), Error);
  outcome.final_item = 12;
  outcome.iterations_used = 1;
  CHECK_THROWS_AS(validate(outcome, 4), Error);
}

TEST_CASE("run config invariants") {
  RunConfig cfg;
  CHECK_NOTHROW(validate(cfg));

  SUBCASE("split must sum to one") {
    cfg.split.train = 0.7;
    CHECK_THROWS_AS(validate(cfg), Error);
  }
  SUBCASE("k restricted") {
    cfg.k_ratio = 2;
    CHECK_THROWS_AS(validate(cfg), Error);
  }
  SUBCASE("candidate size floor") {
    cfg.candidate_size = 1;
    CHECK_THROWS_AS(validate(cfg), Error);
  }
  SUBCASE("max epoch floor") {
    cfg.max_epoch = 0;
    CHECK_THROWS_AS(validate(cfg), Error);
  }
}

TEST_CASE("json round-trip is the identity") {
  auto rng = make_rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    UserSequence seq;
    seq.user = static_cast<UserId>(uniform_below(rng, 1000));
    const int n = 1 + static_cast<int>(uniform_below(rng, 8));
    Timestamp ts = static_cast<Timestamp>(uniform_below(rng, 100));
    for (int i = 0; i < n; ++i) {
      seq.items.push_back(static_cast<ItemId>(uniform_below(rng, 500)));
      seq.timestamps.push_back(ts);
      ts += static_cast<Timestamp>(uniform_below(rng, 50));
    }
    const nlohmann::json j = seq;
    const auto back = j.get<UserSequence>();
    CHECK(back.user == seq.user);
    CHECK(back.items == seq.items);
    CHECK(back.timestamps == seq.timestamps);
    CHECK(nlohmann::json(back).dump() == j.dump());
  }

  RewardScore score{0.731, 0.675};
  CHECK(nlohmann::json(nlohmann::json(score).get<RewardScore>()).dump() ==
        nlohmann::json(score).dump());

  TurnRecord turn;
  turn.round = 3;
  turn.model_item = 42;
  turn.item = 41;
  turn.rec_reason = "matches the recent streak";
  turn.score = RewardScore{1.25, 0.77};
  turn.accepted = false;
  turn.user_reason = "not quite";
  turn.rec_prompt_hash = "abc";
  turn.user_prompt_hash = "def";
  const nlohmann::json tj = turn;
  CHECK(nlohmann::json(tj.get<TurnRecord>()).dump() == tj.dump());

  TurnRecord ablated = turn;
  ablated.model_item.reset();
  ablated.score.reset();
  const nlohmann::json aj = ablated;
  CHECK(aj.at("i_m").is_null());
  CHECK(aj.at("s_raw").is_null());
  CHECK(nlohmann::json(aj.get<TurnRecord>()).dump() == aj.dump());

  RunConfig cfg;
  cfg.seed = 123;
  cfg.policy = OrderingPolicy::Last;
  const nlohmann::json cj = cfg;
  CHECK(nlohmann::json(cj.get<RunConfig>()).dump() == cj.dump());
}

TEST_CASE("format_fixed renders reward scores") {
  CHECK(format_fixed(0.5, 4) == "0.5000");
  CHECK(format_fixed(0.12345, 4) == "0.1235");
  CHECK(format_fixed(1.0, 4) == "1.0000");
}

TEST_CASE("fnv1a is stable") {
  CHECK(fnv1a_hex("") == fnv1a_hex(""));
  CHECK(fnv1a_hex("a") != fnv1a_hex("b"));
  CHECK(fnv1a_hex("prompt body").size() == 16);
}

}  // TEST_SUITE
