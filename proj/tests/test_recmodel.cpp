#include "afl/recmodel.hpp"

#include <cmath>

#include "doctest.h"

#include "afl/error.hpp"
#include "afl/rng.hpp"
#include "afl/synth.hpp"
#include "test_util.hpp"

using namespace afl;

namespace {

std::vector<UserSequence> tiny_split(const std::vector<std::vector<ItemId>>& rows) {
  std::vector<UserSequence> split;
  UserId user = 1;
  for (const auto& items : rows) {
    UserSequence seq;
    seq.user = user++;
    Timestamp t = 0;
    for (ItemId id : items) {
      seq.items.push_back(id);
      seq.timestamps.push_back(t += 10);
    }
    split.push_back(std::move(seq));
  }
  return split;
}

// planted: users 1-3 always follow item 3 with item 7; users 4-5 never do
std::vector<UserSequence> planted_pair_split() {
  return tiny_split({{1, 3, 7, 2, 3, 7, 1, 3, 7, 2, 3, 7},
                     {2, 3, 7, 1, 3, 7, 2, 3, 7, 1, 3, 7},
                     {1, 3, 7, 2, 3, 7, 2, 3, 7, 1, 3, 7},
                     {5, 6, 8, 5, 6, 8, 5, 6, 8},
                     {6, 5, 8, 6, 5, 8, 6, 5, 8}});
}

CandidateList slate(const std::vector<ItemId>& items) {
  CandidateList list;
  list.items = items;
  list.positive_index = 0;
  list.policy = OrderingPolicy::Random;
  return list;
}

}  // namespace

TEST_SUITE("recmodel") {

TEST_CASE("popularity counts raw occurrences") {
  const auto split = tiny_split({{10, 10, 11}});
  const auto [artifact, report] = train(ScorerKind::Popularity, split, Hyperparams{}, 1);
  CHECK(score(artifact, {}, 10) == doctest::Approx(2.0));
  CHECK(score(artifact, {}, 11) == doctest::Approx(1.0));
  CHECK(score(artifact, {}, 999) == doctest::Approx(0.0));  // unseen: minimum score
}

TEST_CASE("markov1 counts bigrams with add-one smoothing") {
  const auto split = tiny_split({{1, 2, 1, 2}});  // a=1, b=2
  const auto [artifact, report] = train(ScorerKind::Markov1, split, Hyperparams{}, 1);
  // transition(a->b)=2, (b->a)=1, |V|=2
  const std::vector<ItemId> hist_a{1};
  const std::vector<ItemId> hist_b{2};
  CHECK(score(artifact, hist_a, 2) == doctest::Approx((2.0 + 1.0) / (2.0 + 2.0)));
  CHECK(score(artifact, hist_b, 1) == doctest::Approx((1.0 + 1.0) / (1.0 + 2.0)));
  // empty transition row: uniform smoothed value 1/|V|
  const std::vector<ItemId> hist_unseen{999};
  CHECK(score(artifact, hist_unseen, 1) == doctest::Approx(0.5));
  // unknown next item: smoothed zero, no exception
  CHECK(score(artifact, hist_a, 999) == doctest::Approx(1.0 / (2.0 + 2.0)));
}

TEST_CASE("mf-pairwise zero-init scores zero") {
  ScorerArtifact artifact;
  artifact.kind = ScorerKind::MfPairwise;
  artifact.vocab = {1, 2, 3};
  artifact.rebuild_index();
  artifact.dim = 4;
  artifact.in_emb.assign(12, 0.0);
  artifact.out_emb.assign(12, 0.0);
  artifact.bias.assign(3, 0.0);
  const std::vector<ItemId> hist{1, 2};
  CHECK(score(artifact, hist, 3) == doctest::Approx(0.0));
  CHECK(score(artifact, hist, 999) == doctest::Approx(0.0));  // OOV: zero parameters
}

TEST_CASE("mf-pairwise learns the planted continuation") {
  const auto split = planted_pair_split();
  Hyperparams hyper;
  hyper.dim = 8;
  hyper.epochs = 60;
  hyper.learning_rate = 0.1;
  hyper.window = 1;  // the planted signal is a bigram
  const auto [artifact, report] = train(ScorerKind::MfPairwise, split, hyper, 9);

  // oracle: exhaustive score comparison after a ...,3 context
  const std::vector<ItemId> context{1, 3};
  const double target = score(artifact, context, 7);
  for (ItemId other : artifact.vocab) {
    if (other == 7) continue;
    CHECK(target > score(artifact, context, other));
  }
  REQUIRE(report.epoch_losses.size() == 60);
  CHECK(report.epoch_losses.back() < report.epoch_losses.front());
}

TEST_CASE("mf-pairwise loss is non-increasing on the planted set within 5%") {
  const InteractionLog log = make_planted_log(200, 500, 42);
  const auto sequences = to_sequences(log);
  const auto [artifact, report] = train(ScorerKind::MfPairwise, sequences, Hyperparams{}, 42);
  REQUIRE(!report.epoch_losses.empty());
  for (std::size_t e = 1; e < report.epoch_losses.size(); ++e)
    CHECK(report.epoch_losses[e] <= report.epoch_losses[e - 1] * 1.05);
  CHECK(report.epoch_losses.back() < 0.5 * report.epoch_losses.front());
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
  const auto split = planted_pair_split();
  Hyperparams hyper;
  hyper.dim = 6;
  hyper.epochs = 10;
  const auto a = train(ScorerKind::MfPairwise, split, hyper, 77).first;
  const auto b = train(ScorerKind::MfPairwise, split, hyper, 77).first;
  CHECK(artifact_to_json(a).dump() == artifact_to_json(b).dump());

  const auto c = train(ScorerKind::MfPairwise, split, hyper, 78).first;
  CHECK(artifact_to_json(a).dump() != artifact_to_json(c).dump());
}

TEST_CASE("empty train split is a training error") {
  CHECK_THROWS_AS(train(ScorerKind::Popularity, {}, Hyperparams{}, 1), Error);
}

TEST_CASE("top_k sorts by score then ascending id") {
  const auto split = tiny_split({{5, 5, 5, 4, 4, 3}});
  const auto artifact = train(ScorerKind::Popularity, split, Hyperparams{}, 1).first;

  const CandidateList list = slate({3, 4, 5, 9});
  const std::vector<ItemId> hist{5};
  CHECK(top_k(artifact, hist, list, 1) == std::vector<ItemId>{5});
  CHECK(top_k(artifact, hist, list, 4) == std::vector<ItemId>{5, 4, 3, 9});

  SUBCASE("ties break on the lower id") {
    const auto tied = train(ScorerKind::Popularity, tiny_split({{8, 9}}), Hyperparams{}, 1).first;
    CHECK(top_k(tied, hist, slate({9, 8}), 2) == std::vector<ItemId>{8, 9});
  }
  SUBCASE("k bounds") {
    CHECK_THROWS_AS(top_k(artifact, hist, list, 0), Error);
    CHECK_THROWS_AS(top_k(artifact, hist, list, 5), Error);
  }
}

TEST_CASE("top_k(k=n) equals a brute-force sort") {
  auto rng = make_rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<ItemId>> rows(3);
    for (auto& row : rows) {
      const int n = 2 + static_cast<int>(uniform_below(rng, 20));
      for (int i = 0; i < n; ++i) row.push_back(1 + static_cast<ItemId>(uniform_below(rng, 40)));
    }
    const auto artifact = train(ScorerKind::Popularity, tiny_split(rows), Hyperparams{}, 1).first;

    std::vector<ItemId> items;
    while (items.size() < 20) {
      const ItemId id = 1 + static_cast<ItemId>(uniform_below(rng, 60));
      if (std::find(items.begin(), items.end(), id) == items.end()) items.push_back(id);
    }
    const CandidateList list = slate(items);
    const std::vector<ItemId> hist{items[0]};
    const auto ordered = top_k(artifact, hist, list, 20);

    auto naive = items;
    std::sort(naive.begin(), naive.end(), [&](ItemId a, ItemId b) {
      const double sa = score(artifact, hist, a);
      const double sb = score(artifact, hist, b);
      if (sa != sb) return sa > sb;
      return a < b;
    });
    CHECK(ordered == naive);
  }
}

TEST_CASE("reward score is a bounded monotone sigmoid") {
  const auto artifact = train(ScorerKind::Popularity, tiny_split({{1, 1, 2}}), Hyperparams{}, 1).first;
  CHECK(reward_score(artifact, {}, 999).normalized == doctest::Approx(0.5));  // raw 0

  // pointwise sigmoid check over a 1000-value grid; the range keeps the
  // result away from double saturation so strict bounds are meaningful
  auto rng = make_rng(4242);
  double prev_norm = sigmoid(-31.0);
  for (int i = 0; i < 1000; ++i) {
    const double raw = -30.0 + 0.06 * i + uniform_unit(rng) * 0.05;
    const double norm = sigmoid(raw);
    CHECK(norm == doctest::Approx(1.0 / (1.0 + std::exp(-raw))).epsilon(1e-12));
    CHECK(norm > 0.0);
    CHECK(norm < 1.0);
    CHECK(norm > prev_norm);  // grid is strictly increasing in raw
    prev_norm = norm;
  }
  CHECK(sigmoid(1000.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-1000.0) == doctest::Approx(0.0));
}

TEST_CASE("gradients match central finite differences") {
  const auto split = planted_pair_split();
  Hyperparams hyper;
  hyper.dim = 5;
  hyper.epochs = 3;
  auto artifact = train(ScorerKind::MfPairwise, split, hyper, 3).first;

  SUBCASE("zero-initialized model, one triple") {
    ScorerArtifact zero = artifact;
    std::fill(zero.in_emb.begin(), zero.in_emb.end(), 0.0);
    std::fill(zero.out_emb.begin(), zero.out_emb.end(), 0.0);
    std::fill(zero.bias.begin(), zero.bias.end(), 0.0);
    const PairwiseSample sample{{0, 1}, 2, 3};
    CHECK(gradient_check(zero, sample, 1e-4) < 1e-4);
  }
  SUBCASE("random init, 10 triples") {
    auto rng = make_rng(17);
    for (int t = 0; t < 10; ++t) {
      PairwiseSample sample;
      const int ctx = 1 + static_cast<int>(uniform_below(rng, 4));
      for (int i = 0; i < ctx; ++i)
        sample.context.push_back(static_cast<int>(uniform_below(rng, artifact.vocab.size())));
      sample.pos = static_cast<int>(uniform_below(rng, artifact.vocab.size()));
      do {
        sample.neg = static_cast<int>(uniform_below(rng, artifact.vocab.size()));
      } while (sample.neg == sample.pos);
      CHECK(gradient_check(artifact, sample, 1e-4) < 1e-4);
    }
  }
  SUBCASE("identical positive and negative collapses to ln 2") {
    const PairwiseSample sample{{0, 1}, 2, 2};
    CHECK(pairwise_loss(artifact, sample, 0.0) == doctest::Approx(std::log(2.0)));
    const auto grad = pairwise_grad(artifact, sample, 0.0);
    for (double g : grad) CHECK(g == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("artifact save/load round-trips and rejects bad versions") {
  TempDir dir;
  const auto split = planted_pair_split();
  Hyperparams hyper;
  hyper.dim = 4;
  hyper.epochs = 5;
  const auto artifact = train(ScorerKind::MfPairwise, split, hyper, 21).first;
  save_artifact(artifact, dir.file("model.scorer"));
  const auto loaded = load_artifact(dir.file("model.scorer"));
  CHECK(artifact_to_json(loaded).dump() == artifact_to_json(artifact).dump());
  CHECK(loaded.index_of(7) == artifact.index_of(7));

  SUBCASE("markov artifacts round-trip too") {
    const auto markov = train(ScorerKind::Markov1, split, Hyperparams{}, 2).first;
    save_artifact(markov, dir.file("markov.scorer"));
    const auto back = load_artifact(dir.file("markov.scorer"));
    CHECK(artifact_to_json(back).dump() == artifact_to_json(markov).dump());
    const std::vector<ItemId> hist{3};
    CHECK(score(back, hist, 7) == doctest::Approx(score(markov, hist, 7)));
  }
  SUBCASE("version mismatch rejected") {
    auto j = artifact_to_json(artifact);
    j["version"] = 2;
    dir.write("bad.scorer", j.dump());
    CHECK_THROWS_AS(load_artifact(dir.file("bad.scorer")), Error);
  }
  SUBCASE("foreign files rejected") {
    dir.write("foreign.scorer", "{\"format\": \"something-else\", \"version\": 1}");
    CHECK_THROWS_AS(load_artifact(dir.file("foreign.scorer")), Error);
  }
}

}  // TEST_SUITE
