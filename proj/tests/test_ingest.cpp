#include "afl/ingest.hpp"

#include <set>
#include <sstream>
#include <unordered_set>

#include "doctest.h"

#include "afl/error.hpp"
#include "afl/rng.hpp"
#include "afl/synth.hpp"
#include "test_util.hpp"

using namespace afl;

namespace {

InteractionLog catalog_only(int n_items) {
  InteractionLog log;
  for (int i = 1; i <= n_items; ++i) log.catalog.add({i, "Artist " + std::to_string(1000 + i)});
  return log;
}

void push_sequence(InteractionLog& log, UserId user, const std::vector<ItemId>& items,
                   Timestamp t0) {
  log.user_order.push_back(user);
  Timestamp t = t0;
  for (ItemId item : items) {
    log.events.push_back({user, item, t});
    t += 10;
  }
}

}  // namespace

TEST_SUITE("ingest") {

TEST_CASE("load_interactions parses well-formed rows") {
  TempDir dir;
  dir.write("catalog.tsv", "1\tRusko\n2\tMaserati\n3\tKirsty MacColl\n");
  dir.write("interactions.tsv", "10\t1\t100\n10\t2\t200\n20\t3\t150\n");
  const InteractionLog log = load_interactions(dir.file("interactions.tsv"), dir.file("catalog.tsv"));
  CHECK(log.events.size() == 3);
  CHECK(log.user_order.size() == 2);
  CHECK(log.catalog.size() == 3);
  CHECK(log.catalog.title_of(1) == "Rusko");

  const auto sequences = to_sequences(log);
  REQUIRE(sequences.size() == 2);
  CHECK(sequences[0].user == 10);
  CHECK(sequences[0].items == std::vector<ItemId>{1, 2});
  CHECK(sequences[1].user == 20);
}

TEST_CASE("load_interactions reports malformed rows with line numbers") {
  TempDir dir;
  dir.write("catalog.tsv", "1\tRusko\n");

  SUBCASE("non-integer item") {
    dir.write("interactions.tsv", "u1\tx\t12\n");
    try {
      load_interactions(dir.file("interactions.tsv"), dir.file("catalog.tsv"));
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
  SUBCASE("wrong arity") {
    dir.write("interactions.tsv", "1\t1\t5\n1\t1\n");
    try {
      load_interactions(dir.file("interactions.tsv"), dir.file("catalog.tsv"));
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("unknown item id is a reference error") {
    dir.write("interactions.tsv", "1\t9\t5\n");
    try {
      load_interactions(dir.file("interactions.tsv"), dir.file("catalog.tsv"));
      FAIL("expected a reference error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Reference);
    }
  }
}

TEST_CASE("loader reproduces lastfm-scale statistics") {
  // 1,220 sequences / 4,606 items / 73,510 interactions
  TempDir dir;
  {
    std::ostringstream catalog;
    for (int i = 1; i <= 4606; ++i) catalog << i << "\tArtist " << 10000 + i << "\n";
    dir.write("catalog.tsv", catalog.str());

    std::ostringstream rows;
    auto rng = make_rng(7);
    int written = 0;
    for (int u = 1; u <= 1220; ++u) {
      const int events = 60 + (u <= 310 ? 1 : 0);  // 1220*60 + 310 = 73,510
      for (int e = 0; e < events; ++e) {
        rows << u << '\t' << 1 + uniform_below(rng, 4606) << '\t' << u * 1000 + e << "\n";
        ++written;
      }
    }
    REQUIRE(written == 73510);
    dir.write("interactions.tsv", rows.str());
  }
  const InteractionLog log = load_interactions(dir.file("interactions.tsv"), dir.file("catalog.tsv"));
  CHECK(log.user_order.size() == 1220);
  CHECK(log.catalog.size() == 4606);
  CHECK(log.events.size() == 73510);
  CHECK(to_sequences(log).size() == 1220);
}

TEST_CASE("chronological split follows the 8:1:1 floor rule") {
  InteractionLog log = catalog_only(30);
  for (int u = 1; u <= 10; ++u) push_sequence(log, u, {1, 2, 3}, 1000 * u);
  const DatasetSplit split = chronological_split(log, SplitRatios{});
  CHECK(split.train.size() == 8);
  CHECK(split.val.size() == 1);
  CHECK(split.test.size() == 1);
  // earliest end-times go to train, the latest to test
  CHECK(split.test[0].user == 10);
  CHECK(split.val[0].user == 9);
}

TEST_CASE("split orders whole sequences by end time") {
  // oracle: exhaustive pairwise comparison of last-event timestamps
  InteractionLog log = catalog_only(60);
  auto rng = make_rng(31337);
  std::set<Timestamp> used;
  for (int u = 1; u <= 50; ++u) {
    Timestamp t0;
    do {
      t0 = static_cast<Timestamp>(uniform_below(rng, 1000000));
    } while (!used.insert(t0).second);
    std::vector<ItemId> items;
    const int n = 2 + static_cast<int>(uniform_below(rng, 6));
    for (int i = 0; i < n; ++i) items.push_back(1 + static_cast<ItemId>(uniform_below(rng, 60)));
    push_sequence(log, u, items, t0 * 100);
  }
  const DatasetSplit split = chronological_split(log, SplitRatios{});
  REQUIRE(split.train.size() == 40);
  REQUIRE(split.val.size() == 5);
  REQUIRE(split.test.size() == 5);

  for (const auto& a : split.train)
    for (const auto& b : split.val) CHECK(a.last_timestamp() <= b.last_timestamp());
  for (const auto& a : split.val)
    for (const auto& b : split.test) CHECK(a.last_timestamp() <= b.last_timestamp());
  for (const auto& a : split.train)
    for (const auto& b : split.test) CHECK(a.last_timestamp() < b.last_timestamp());

  // partition: every sequence lands in exactly one part
  std::set<UserId> seen;
  for (const auto* part : {&split.train, &split.val, &split.test})
    for (const auto& seq : *part) CHECK(seen.insert(seq.user).second);
  CHECK(seen.size() == 50);
}

TEST_CASE("split needs at least 3 sequences") {
  InteractionLog log = catalog_only(5);
  push_sequence(log, 1, {1}, 10);
  push_sequence(log, 2, {2}, 20);
  CHECK_THROWS_AS(chronological_split(log, SplitRatios{}), Error);
}

TEST_CASE("sample_candidates satisfies the slate contract") {
  InteractionLog log = catalog_only(100);
  UserSequence seq{5, {1, 2, 3, 4}, {10, 20, 30, 40}};

  const CandidateList list =
      sample_candidates(seq, 4, log.catalog, 7, OrderingPolicy::Random, 20);
  CHECK_NOTHROW(validate(list, 20));
  CHECK(list.positive() == 4);
  const std::unordered_set<ItemId> history(seq.items.begin(), seq.items.end());
  int positives = 0;
  for (ItemId id : list.items) {
    if (id == 4) {
      ++positives;
      continue;
    }
    CHECK(!history.count(id));
  }
  CHECK(positives == 1);

  SUBCASE("deterministic under a fixed seed") {
    const CandidateList again =
        sample_candidates(seq, 4, log.catalog, 7, OrderingPolicy::Random, 20);
    CHECK(again.items == list.items);
    CHECK(again.positive_index == list.positive_index);
  }
  SUBCASE("different seeds differ") {
    const CandidateList other =
        sample_candidates(seq, 4, log.catalog, 8, OrderingPolicy::Random, 20);
    CHECK(other.items != list.items);
  }
  SUBCASE("policy pins the positive") {
    CHECK(sample_candidates(seq, 4, log.catalog, 7, OrderingPolicy::First, 20).positive_index == 0);
    CHECK(sample_candidates(seq, 4, log.catalog, 7, OrderingPolicy::Last, 20).positive_index == 19);
  }
  SUBCASE("policies share the same candidate set under one seed") {
    const CandidateList first = sample_candidates(seq, 4, log.catalog, 7, OrderingPolicy::First, 20);
    const CandidateList last = sample_candidates(seq, 4, log.catalog, 7, OrderingPolicy::Last, 20);
    std::set<ItemId> a(first.items.begin(), first.items.end());
    std::set<ItemId> b(last.items.begin(), last.items.end());
    std::set<ItemId> c(list.items.begin(), list.items.end());
    CHECK(a == b);
    CHECK(a == c);
  }
}

TEST_CASE("sample_candidates wants enough negatives") {
  InteractionLog log = catalog_only(15);  // 14 eligible negatives < 19
  UserSequence seq{5, {1}, {10}};
  CHECK_THROWS_AS(sample_candidates(seq, 2, log.catalog, 7, OrderingPolicy::Random, 20), Error);
}

TEST_CASE("candidate sampling holds over many random instances") {
  auto rng = make_rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int catalog_size = 60 + static_cast<int>(uniform_below(rng, 150));
    InteractionLog log = catalog_only(catalog_size);
    UserSequence seq;
    seq.user = static_cast<UserId>(1 + uniform_below(rng, 10000));
    const int hist = 1 + static_cast<int>(uniform_below(rng, 30));
    Timestamp t = 0;
    std::set<ItemId> picked;
    for (int i = 0; i < hist; ++i) {
      seq.items.push_back(1 + static_cast<ItemId>(uniform_below(rng, catalog_size)));
      seq.timestamps.push_back(t += 5);
    }
    const ItemId target = seq.items.back();
    const std::uint64_t seed = rng();
    const CandidateList list =
        sample_candidates(seq, target, log.catalog, seed, OrderingPolicy::Random, 20);
    validate(list, 20);
    std::unordered_set<ItemId> unique(list.items.begin(), list.items.end());
    CHECK(unique.size() == 20);
    CHECK(list.positive() == target);
    int hits = 0;
    for (ItemId id : list.items)
      if (id == target) ++hits;
    CHECK(hits == 1);
  }
}

TEST_CASE("sim panels hold the exact 1:k label split") {
  InteractionLog log = catalog_only(200);
  UserSequence seq;
  seq.user = 9;
  Timestamp t = 0;
  for (int i = 1; i <= 60; ++i) {
    seq.items.push_back(i);  // all distinct; held-out tail has 12 fresh items
    seq.timestamps.push_back(t += 10);
  }

  SUBCASE("k=1 gives 10/10") {
    const SimPanel panel = build_sim_panel(seq, 0.8, 1, log.catalog, 11);
    CHECK(panel.items.size() == 20);
    int pos = 0;
    for (const auto& [id, label] : panel.items) pos += label ? 1 : 0;
    CHECK(pos == 10);
  }
  SUBCASE("k=3 gives 5/15") {
    const SimPanel panel = build_sim_panel(seq, 0.8, 3, log.catalog, 11);
    int pos = 0;
    for (const auto& [id, label] : panel.items) pos += label ? 1 : 0;
    CHECK(pos == 5);
  }
  SUBCASE("k=9 gives 2/18") {
    const SimPanel panel = build_sim_panel(seq, 0.8, 9, log.catalog, 11);
    int pos = 0;
    for (const auto& [id, label] : panel.items) pos += label ? 1 : 0;
    CHECK(pos == 2);
  }
  SUBCASE("positives come from the held-out tail, negatives from outside the history") {
    const SimPanel panel = build_sim_panel(seq, 0.8, 3, log.catalog, 11);
    const std::unordered_set<ItemId> all(seq.items.begin(), seq.items.end());
    const std::unordered_set<ItemId> init(seq.items.begin(), seq.items.begin() + 48);
    for (const auto& [id, label] : panel.items) {
      if (label) {
        CHECK(all.count(id));
        CHECK(!init.count(id));
      } else {
        CHECK(!all.count(id));
      }
    }
  }
}

TEST_CASE("panel error when the held-out segment is too short") {
  InteractionLog log = catalog_only(100);
  UserSequence seq{3, {1, 2, 3, 4}, {10, 20, 30, 40}};  // held-out = 1 item
  CHECK_THROWS_AS(build_sim_panel(seq, 0.8, 3, log.catalog, 5), Error);
}

TEST_CASE("popularity counts cover only training interactions") {
  InteractionLog log = catalog_only(30);
  // the last sequences by end time land in val/test
  push_sequence(log, 1, {1, 1, 1, 1, 1}, 100);
  push_sequence(log, 2, {2, 1, 2}, 200);
  for (int u = 3; u <= 10; ++u) push_sequence(log, u, {3, 4}, 300 + 10 * u);
  const DatasetSplit split = chronological_split(log, SplitRatios{});
  REQUIRE(split.test.size() == 1);

  const auto counts = popularity_counts(split);
  // oracle: naive full scan over the training part
  std::map<ItemId, std::int64_t> naive;
  for (const auto& seq : split.train)
    for (ItemId id : seq.items) naive[id] += 1;
  for (const auto& [id, count] : naive) CHECK(counts.at(id) == count);
  CHECK(counts.at(1) == naive[1]);

  // items only in val/test are present with count zero
  for (const auto* part : {&split.val, &split.test})
    for (const auto& seq : *part)
      for (ItemId id : seq.items)
        if (!naive.count(id)) CHECK(counts.at(id) == 0);
}

TEST_CASE("split manifest lists one line per user") {
  TempDir dir;
  InteractionLog log = catalog_only(10);
  for (int u = 1; u <= 5; ++u) push_sequence(log, u, {1, 2}, 100 * u);
  const DatasetSplit split = chronological_split(log, SplitRatios{0.6, 0.2, 0.2});
  write_split_manifest(split, dir.file("manifest.tsv"));

  std::ifstream in(dir.file("manifest.tsv"));
  std::string line;
  int lines = 0;
  int train_lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    if (line.find("\ttrain") != std::string::npos) ++train_lines;
  }
  CHECK(lines == 5);
  CHECK(train_lines == 3);
}

TEST_CASE("init boundary stays inside the sequence") {
  CHECK(init_boundary(10, 0.8) == 8);
  CHECK(init_boundary(5, 0.8) == 4);
  CHECK(init_boundary(2, 0.8) == 1);
  CHECK(init_boundary(3, 0.1) == 1);   // clamped up
  CHECK(init_boundary(10, 0.99) == 9); // clamped below length
}

TEST_CASE("planted log is deterministic and loadable") {
  const InteractionLog log = make_planted_log(50, 120, 42);
  const InteractionLog again = make_planted_log(50, 120, 42);
  CHECK(log.events.size() == again.events.size());
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    CHECK(log.events[i].user == again.events[i].user);
    CHECK(log.events[i].item == again.events[i].item);
    CHECK(log.events[i].timestamp == again.events[i].timestamp);
  }

  TempDir dir;
  write_log_tsv(log, dir.file("interactions.tsv"), dir.file("catalog.tsv"));
  const InteractionLog loaded =
      load_interactions(dir.file("interactions.tsv"), dir.file("catalog.tsv"));
  CHECK(loaded.events.size() == log.events.size());
  CHECK(loaded.catalog.size() == log.catalog.size());
  CHECK_NOTHROW(chronological_split(loaded, SplitRatios{}));
}

}  // TEST_SUITE
