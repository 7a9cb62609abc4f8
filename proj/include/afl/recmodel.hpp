#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "afl/domain.hpp"

namespace afl {

struct Hyperparams {
  int dim = 32;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  int epochs = 30;
  int window = 10;  // history tail length used for scoring
};

struct TrainMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  Hyperparams hyper;
  double final_loss = 0.0;
};

// Trained scorer; behaves as either the interchangeable recommendation model
// or the frozen reward model. Immutable after training.
struct ScorerArtifact {
  ScorerKind kind = ScorerKind::Popularity;
  std::vector<ItemId> vocab;  // ascending

  // popularity
  std::vector<std::int64_t> counts;
  // markov1: bigram transition counts, rows/cols are vocab indices
  std::vector<std::map<int, std::int64_t>> transitions;
  std::vector<std::int64_t> row_totals;
  // mf-pairwise
  int dim = 0;
  std::vector<double> in_emb;   // |V| x dim, history side
  std::vector<double> out_emb;  // |V| x dim, target side
  std::vector<double> bias;     // |V|

  TrainMeta meta;

  int index_of(ItemId id) const;  // -1 when out of vocabulary
  void rebuild_index();

 private:
  std::unordered_map<ItemId, int> index_;
};

struct TrainReport {
  std::vector<double> epoch_losses;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
};

std::pair<ScorerArtifact, TrainReport> train(ScorerKind kind,
                                             const std::vector<UserSequence>& train_split,
                                             const Hyperparams& hyper, std::uint64_t seed);

// Preference score for one item given a history. Out-of-vocabulary items
// score as if their parameters were zero-initialized; no exceptions.
double score(const ScorerArtifact& artifact, std::span<const ItemId> history, ItemId item);

std::vector<double> score_candidates(const ScorerArtifact& artifact,
                                     std::span<const ItemId> history,
                                     const CandidateList& candidates);

// Candidates sorted by score descending, ties broken by ascending item id.
std::vector<ItemId> top_k(const ScorerArtifact& artifact, std::span<const ItemId> history,
                          const CandidateList& candidates, int k);

RewardScore reward_score(const ScorerArtifact& reward_artifact, std::span<const ItemId> history,
                         ItemId item, double temperature = 1.0);

double sigmoid(double x);

// One pairwise-ranking example over vocab indices; context may repeat items.
struct PairwiseSample {
  std::vector<int> context;
  int pos = 0;
  int neg = 0;
};

// Loss/gradient of -log sigmoid(score(ctx,pos) - score(ctx,neg)) plus L2 on
// the touched parameters. Gradient is laid out as [in_emb, out_emb, bias].
double pairwise_loss(const ScorerArtifact& artifact, const PairwiseSample& sample, double l2);
std::vector<double> pairwise_grad(const ScorerArtifact& artifact, const PairwiseSample& sample,
                                  double l2);

// Max relative error between the analytic gradient and central finite
// differences with step h, over every parameter.
double gradient_check(const ScorerArtifact& artifact, const PairwiseSample& sample, double l2,
                      double h = 1e-5);

void save_artifact(const ScorerArtifact& artifact, const std::string& path);
ScorerArtifact load_artifact(const std::string& path);
nlohmann::json artifact_to_json(const ScorerArtifact& artifact);
ScorerArtifact artifact_from_json(const nlohmann::json& j);

}  // namespace afl
