#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afl/agents.hpp"
#include "afl/backend.hpp"
#include "afl/domain.hpp"
#include "afl/recmodel.hpp"
#include "afl/transcript.hpp"

namespace afl {

// One evaluation case. truth is harness-only: it feeds hit scoring and the
// oracle user backend, never the recommendation side.
struct LoopCase {
  UserId user = 0;
  UserSequence history;  // I_1 .. I_n, target held out
  CandidateList candidates;
  ItemId truth = 0;
  std::string phase = "loop";
};

struct LoopEnv {
  const ScorerArtifact* rec_model = nullptr;     // I_m source
  const ScorerArtifact* reward_model = nullptr;  // S source
  const ScorerArtifact* view_model = nullptr;    // scripted views + parse fallbacks;
                                                 // defaults to rec_model when null
  Backend* rec_backend = nullptr;
  Backend* user_backend = nullptr;
  PromptTemplates templates;
  DomainNouns nouns;
  const Catalog* catalog = nullptr;
  RunConfig cfg;
  std::string run_id;
};

struct LoopState {
  int epoch = 1;
  int max_epoch = 4;
  AgentMemory rec_memory{MemoryOwner::Recommendation, {}};
  AgentMemory user_memory{MemoryOwner::User, {}};
  std::vector<ItemId> rejected;
  std::optional<ItemId> model_item;
};

// Appends the {I_r, R_r, R_u} triple to both memories, marks I_r rejected and
// advances the epoch. Only valid after a rejection.
void update_memories(LoopState& state, const RecTurn& turn, const Decision& decision);

// Algorithm: compute I_m once, then per iteration recommend -> reward_score ->
// judge; rejections update both memories; acceptance breaks; the last I_r is
// returned either way. final_state, when given, receives the end-of-run
// memories and rejected set.
LoopOutcome run_feedback_loop(const LoopEnv& env, const LoopCase& loop_case, RecordLog* log,
                              LoopState* final_state = nullptr);

struct CaseResult {
  UserId user = 0;
  ItemId truth = 0;
  bool errored = false;
  std::string error;
  LoopOutcome outcome;
  RecordLog records;
};

// Fans cases out over a worker pool; results come back indexed by case order,
// so aggregation is independent of scheduling.
std::vector<CaseResult> run_many(const LoopEnv& env, const std::vector<LoopCase>& cases,
                                 int concurrency);

// Generic indexed fan-out used by the experiment drivers.
void parallel_for(std::size_t count, int concurrency, const std::function<void(std::size_t)>& fn);

}  // namespace afl
