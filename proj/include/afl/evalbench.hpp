#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "afl/ingest.hpp"
#include "afl/loop.hpp"

namespace afl {

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_flagged = false;  // degenerate denominator, value forced to 0
  bool recall_flagged = false;
  bool f1_flagged = false;
};

// Fraction of (final_item, truth) pairs that match.
double hit_ratio_at_1(const std::vector<std::pair<ItemId, ItemId>>& outcomes);

Prf1 prf1(const Confusion& confusion);

struct MetricsReport {
  std::string task;
  int n_cases = 0;
  int n_errored = 0;
  int n_skipped = 0;
  bool has_hit_ratio = false;
  double hit_ratio = 0.0;
  bool has_confusion = false;
  Confusion confusion;
  Prf1 scores;
  bool recount_ok = true;
  std::uint64_t seed = 0;
  nlohmann::json config_snapshot;
  nlohmann::json per_case = nlohmann::json::array();
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

void write_report(const MetricsReport& report, const std::string& path);

// A fully assembled run: data, trained artifacts, backends, templates.
struct Experiment {
  RunConfig cfg;
  nlohmann::json snapshot;  // embedded in every report
  Catalog catalog;
  DatasetSplit split;
  ScorerArtifact rec_model;
  ScorerArtifact reward_model;
  ScorerArtifact fallback_model;  // degraded scripted-view scorer for ablations
  bool has_fallback = false;
  std::unique_ptr<Backend> rec_backend;
  std::unique_ptr<Backend> user_backend;
  PromptTemplates templates;
  DomainNouns nouns;
  std::string run_id = "run";

  LoopEnv env() const;
};

// Builds the bundled planted-structure bench end to end (data generation,
// split, scorer training, deterministic backends).
Experiment make_planted_experiment(const RunConfig& cfg, int n_users = 200, int n_items = 500);

// Test-split cases: hold out each sequence's last item and sample a slate.
// Unsampleable sequences are skipped and reported, not fatal.
std::vector<LoopCase> build_rec_cases(const Experiment& exp, int* n_skipped = nullptr);

MetricsReport eval_recommendation(const Experiment& exp,
                                  std::vector<CaseResult>* results_out = nullptr);

MetricsReport eval_user_sim(const Experiment& exp, std::vector<RecordLog>* logs_out = nullptr);

// Reorders the rec agent's 5-item shortlist and picks the head.
using Ranker =
    std::function<std::vector<ItemId>(const LoopCase&, const std::vector<ItemId>&, RecordLog*)>;

Ranker make_scorer_ranker(const Experiment& exp);
Ranker make_user_agent_ranker(const Experiment& exp);

MetricsReport rerank_baseline(const Experiment& exp, const Ranker& ranker,
                              std::vector<RecordLog>* logs_out = nullptr);

// Same pipeline as eval_recommendation; the use_rec_model / use_reward_model
// flags in exp.cfg drive which prompt blocks exist.
MetricsReport run_ablation(const Experiment& exp, std::vector<CaseResult>* results_out = nullptr);

// 0 = top 20%, 1 = middle 20-50%, 2 = bottom 50%; rank by count descending,
// ties by ascending item id. Items outside the map land in the bottom tier.
std::map<ItemId, int> popularity_tiers(const std::map<ItemId, std::int64_t>& counts);

struct PopularityAudit {
  std::map<int, std::array<double, 3>> shares_by_epoch;
  std::array<double, 3> baseline_shares{0.0, 0.0, 0.0};
  nlohmann::json config_snapshot;
  nlohmann::json to_json() const;
};

PopularityAudit audit_popularity(const Experiment& exp, const std::vector<int>& max_epochs);

struct PositionAudit {
  struct Cell {
    double hit_ratio = 0.0;
    std::vector<std::pair<UserId, bool>> case_hits;  // deterministic case order
  };
  std::map<std::string, std::map<int, Cell>> cells;  // policy -> max_epoch -> cell
  nlohmann::json config_snapshot;
  nlohmann::json to_json() const;
};

PositionAudit audit_position(const Experiment& exp, const std::vector<int>& max_epochs);

}  // namespace afl
