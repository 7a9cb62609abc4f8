#include "afl/loop.hpp"

#include <atomic>
#include <thread>

#include "afl/error.hpp"

namespace afl {

void update_memories(LoopState& state, const RecTurn& turn, const Decision& decision) {
  if (decision.accepted)
    raise(ErrorKind::Precondition, "memories are only updated after a rejection");
  MemoryEntry entry;
  entry.round = state.epoch;
  entry.item = turn.item;
  entry.rec_reason = turn.reason;
  entry.user_reason = decision.reason;
  state.rec_memory.append(entry);
  state.user_memory.append(entry);
  state.rejected.push_back(turn.item);
  state.epoch += 1;
}

namespace {

const ScorerArtifact* resolve_view_model(const LoopEnv& env) {
  const ScorerArtifact* vm = env.view_model ? env.view_model : env.rec_model;
  if (!vm) raise(ErrorKind::Precondition, "loop needs a view model for scripted backends");
  return vm;
}

AgentConfig rec_agent_config(const LoopEnv& env) {
  AgentConfig agent;
  agent.backend = env.rec_backend;
  agent.templates = env.templates;
  agent.nouns = env.nouns;
  agent.run_id = env.run_id;
  agent.parse_retries = env.cfg.parse_retries;
  agent.history_cap = env.cfg.history_cap;
  agent.use_rec_model = env.cfg.use_rec_model;
  return agent;
}

AgentConfig user_agent_config(const LoopEnv& env) {
  AgentConfig agent;
  agent.backend = env.user_backend;
  agent.templates = env.templates;
  agent.nouns = env.nouns;
  agent.run_id = env.run_id;
  agent.parse_retries = env.cfg.parse_retries;
  agent.history_cap = env.cfg.history_cap;
  agent.use_reward_model = env.cfg.use_reward_model;
  agent.accept_threshold = env.cfg.accept_threshold;
  return agent;
}

}  // namespace

LoopOutcome run_feedback_loop(const LoopEnv& env, const LoopCase& loop_case, RecordLog* log,
                              LoopState* final_state) {
  if (!env.catalog || !env.rec_backend || !env.user_backend)
    raise(ErrorKind::Precondition, "loop environment is incomplete");
  validate(loop_case.candidates, env.cfg.candidate_size);
  validate(loop_case.history);
  if (env.cfg.use_rec_model && !env.rec_model)
    raise(ErrorKind::Precondition, "rec model required unless ablated");
  if (env.cfg.use_reward_model && !env.reward_model)
    raise(ErrorKind::Precondition, "reward model required unless ablated");

  const ScorerArtifact* view_model = resolve_view_model(env);
  const std::vector<double> view_scores =
      score_candidates(*view_model, loop_case.history.items, loop_case.candidates);

  const AgentConfig rec_agent = rec_agent_config(env);
  const AgentConfig user_agent = user_agent_config(env);

  LoopState state;
  state.max_epoch = env.cfg.max_epoch;
  if (env.cfg.use_rec_model)
    state.model_item =
        top_k(*env.rec_model, loop_case.history.items, loop_case.candidates, 1).front();

  LoopOutcome outcome;
  while (state.epoch <= state.max_epoch) {
    if (env.cfg.refresh_model_suggestion && env.cfg.use_rec_model && state.epoch > 1)
      state.model_item =
          top_k(*env.rec_model, loop_case.history.items, loop_case.candidates, 1).front();

    RecCall rec_call;
    rec_call.memory = &state.rec_memory;
    rec_call.history = &loop_case.history;
    rec_call.candidate_items = &loop_case.candidates.items;
    rec_call.catalog = env.catalog;
    rec_call.model_item = state.model_item;
    rec_call.candidate_scores = view_scores;
    rec_call.rejected = state.rejected;
    rec_call.user = loop_case.user;
    rec_call.phase = loop_case.phase;
    rec_call.round = state.epoch;
    const RecResult rec = recommend(rec_agent, rec_call, log);

    std::optional<RewardScore> score;
    if (env.cfg.use_reward_model)
      score = reward_score(*env.reward_model, loop_case.history.items, rec.turn.item,
                           env.cfg.reward_temperature);

    JudgeCall judge_call;
    judge_call.memory = &state.user_memory;
    judge_call.history = &loop_case.history;
    judge_call.candidate_items = &loop_case.candidates.items;
    judge_call.catalog = env.catalog;
    judge_call.turn = &rec.turn;
    judge_call.score = score;
    judge_call.ground_truth = loop_case.truth;
    judge_call.user = loop_case.user;
    judge_call.phase = loop_case.phase;
    judge_call.round = state.epoch;
    const JudgeResult judged = judge(user_agent, judge_call, log);

    TurnRecord turn;
    turn.round = state.epoch;
    turn.model_item = state.model_item;
    turn.item = rec.turn.item;
    turn.rec_reason = rec.turn.reason;
    turn.score = score;
    turn.accepted = judged.decision.accepted;
    turn.user_reason = judged.decision.reason;
    turn.rec_fallback = rec.fallback;
    turn.user_fallback = judged.fallback;
    turn.rec_prompt_hash = rec.prompt_hash;
    turn.user_prompt_hash = judged.prompt_hash;
    outcome.transcript.push_back(turn);
    if (log) log->add(turn_record(env.run_id, loop_case.user, turn));

    outcome.final_item = rec.turn.item;
    outcome.iterations_used = state.epoch;
    if (judged.decision.accepted) {
      outcome.accepted = true;
      break;
    }
    update_memories(state, rec.turn, judged.decision);
  }

  if (log) log->add(outcome_record(env.run_id, loop_case.user, outcome));
  if (final_state) *final_state = std::move(state);
  return outcome;
}

void parallel_for(std::size_t count, int concurrency, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  const int workers = std::max(1, std::min<int>(concurrency, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<CaseResult> run_many(const LoopEnv& env, const std::vector<LoopCase>& cases,
                                 int concurrency) {
  std::vector<CaseResult> results(cases.size());
  parallel_for(cases.size(), concurrency, [&](std::size_t i) {
    CaseResult& result = results[i];
    result.user = cases[i].user;
    result.truth = cases[i].truth;
    try {
      result.outcome = run_feedback_loop(env, cases[i], &result.records);
    } catch (const Error& e) {
      result.errored = true;
      result.error = e.what();
    }
  });
  return results;
}

}  // namespace afl
