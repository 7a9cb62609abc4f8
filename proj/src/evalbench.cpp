#include "afl/evalbench.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "afl/error.hpp"
#include "afl/rng.hpp"
#include "afl/synth.hpp"

namespace afl {

double hit_ratio_at_1(const std::vector<std::pair<ItemId, ItemId>>& outcomes) {
  if (outcomes.empty()) raise(ErrorKind::UndefinedMetric, "hit ratio over an empty outcome list");
  std::int64_t hits = 0;
  for (const auto& [final_item, truth] : outcomes)
    if (final_item == truth) ++hits;
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

Prf1 prf1(const Confusion& c) {
  if (c.total() < 1) raise(ErrorKind::Precondition, "empty confusion table");
  Prf1 out;
  if (c.tp + c.fp > 0) {
    out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  } else {
    out.precision_flagged = true;
  }
  if (c.tp + c.fn > 0) {
    out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  } else {
    out.recall_flagged = true;
  }
  // harmonic mean computed as 2tp / (2tp + fp + fn), a single division
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom > 0 && out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
  } else {
    out.f1_flagged = true;
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json metrics = nlohmann::json::object();
  if (has_hit_ratio) metrics["hit_ratio_at_1"] = hit_ratio;
  if (has_confusion) {
    metrics["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp},
                            {"fn", confusion.fn}, {"tn", confusion.tn}};
    metrics["precision"] = scores.precision;
    metrics["recall"] = scores.recall;
    metrics["f1"] = scores.f1;
    metrics["flags"] = {{"precision", scores.precision_flagged},
                        {"recall", scores.recall_flagged},
                        {"f1", scores.f1_flagged}};
  }
  return {{"task", task},
          {"n_cases", n_cases},
          {"n_errored", n_errored},
          {"n_skipped", n_skipped},
          {"metrics", std::move(metrics)},
          {"recount_ok", recount_ok},
          {"seed", seed},
          {"config", config_snapshot},
          {"per_case", per_case},
          {"extra", extra}};
}

void write_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write report " + path);
  out << report.to_json().dump(2) << '\n';
}

LoopEnv Experiment::env() const {
  LoopEnv e;
  e.rec_model = &rec_model;
  e.reward_model = &reward_model;
  e.view_model = (!cfg.use_rec_model && has_fallback) ? &fallback_model : &rec_model;
  e.rec_backend = rec_backend.get();
  e.user_backend = user_backend.get();
  e.templates = templates;
  e.nouns = nouns;
  e.catalog = &catalog;
  e.cfg = cfg;
  e.run_id = run_id;
  return e;
}

Experiment make_planted_experiment(const RunConfig& cfg, int n_users, int n_items) {
  validate(cfg);
  Experiment exp;
  exp.cfg = cfg;
  const InteractionLog log = make_planted_log(n_users, n_items, cfg.seed);
  exp.catalog = log.catalog;
  exp.split = chronological_split(log, cfg.split);

  Hyperparams hyper;
  exp.rec_model = train(cfg.rec_model_kind, exp.split.train, hyper, mix_seed(cfg.seed, 1)).first;
  exp.reward_model =
      train(cfg.reward_model_kind, exp.split.train, hyper, mix_seed(cfg.seed, 2)).first;
  exp.fallback_model =
      train(ScorerKind::Popularity, exp.split.train, hyper, mix_seed(cfg.seed, 3)).first;
  exp.has_fallback = true;

  BackendSpec rec_spec;
  rec_spec.kind = cfg.backend_rec;
  BackendSpec user_spec;
  user_spec.kind = cfg.backend_user;
  user_spec.tau = cfg.accept_threshold;
  exp.rec_backend = make_backend(rec_spec);
  exp.user_backend = make_backend(user_spec);

  exp.templates = default_templates();
  exp.nouns = nouns_for_dataset(cfg.dataset_name);
  exp.snapshot = {{"run", cfg},
                  {"dataset", {{"name", cfg.dataset_name}, {"source", "planted"},
                               {"users", n_users}, {"items", n_items}}},
                  {"backends", {{"rec", to_string(cfg.backend_rec)},
                                {"user", to_string(cfg.backend_user)}}},
                  {"models", {{"rec", to_string(cfg.rec_model_kind)},
                              {"reward", to_string(cfg.reward_model_kind)},
                              {"fallback", "popularity"}}}};
  exp.run_id = "planted-" + fnv1a_hex(exp.snapshot.dump());
  return exp;
}

namespace {

std::vector<LoopCase> build_rec_cases_with_policy(const Experiment& exp, OrderingPolicy policy,
                                                  int* n_skipped) {
  const RunConfig& cfg = exp.cfg;
  std::vector<const UserSequence*> pool;
  pool.reserve(exp.split.test.size());
  for (const auto& seq : exp.split.test) pool.push_back(&seq);

  if (cfg.test_subsample > 0 && static_cast<std::size_t>(cfg.test_subsample) < pool.size()) {
    std::vector<std::size_t> indices(pool.size());
    std::iota(indices.begin(), indices.end(), 0);
    auto rng = make_rng(cfg.seed, 0x7E57CA5EULL);
    auto chosen = sample_without_replacement(std::move(indices),
                                             static_cast<std::size_t>(cfg.test_subsample), rng);
    std::sort(chosen.begin(), chosen.end());
    std::vector<const UserSequence*> picked;
    picked.reserve(chosen.size());
    for (std::size_t i : chosen) picked.push_back(pool[i]);
    pool = std::move(picked);
  }

  int skipped = 0;
  std::vector<LoopCase> cases;
  cases.reserve(pool.size());
  for (const UserSequence* seq : pool) {
    if (seq->items.size() < 2) {
      ++skipped;
      continue;
    }
    LoopCase c;
    c.user = seq->user;
    c.truth = seq->items.back();
    c.history.user = seq->user;
    c.history.items.assign(seq->items.begin(), seq->items.end() - 1);
    c.history.timestamps.assign(seq->timestamps.begin(), seq->timestamps.end() - 1);
    try {
      c.candidates =
          sample_candidates(*seq, c.truth, exp.catalog, cfg.seed, policy, cfg.candidate_size);
    } catch (const Error&) {
      ++skipped;
      continue;
    }
    cases.push_back(std::move(c));
  }
  if (n_skipped) *n_skipped = skipped;
  return cases;
}

MetricsReport drive_rec_eval(const Experiment& exp, const LoopEnv& env, const std::string& task,
                             std::vector<CaseResult>* results_out) {
  int skipped = 0;
  const std::vector<LoopCase> cases = build_rec_cases_with_policy(exp, env.cfg.policy, &skipped);
  if (cases.empty()) raise(ErrorKind::UndefinedMetric, "no evaluable test cases");

  std::vector<CaseResult> results = run_many(env, cases, env.cfg.concurrency);

  MetricsReport report;
  report.task = task;
  report.seed = env.cfg.seed;
  report.config_snapshot = exp.snapshot;
  report.n_cases = static_cast<int>(cases.size());
  report.n_skipped = skipped;

  std::vector<std::pair<ItemId, ItemId>> outcomes;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const CaseResult& r = results[i];
    nlohmann::json row = {{"user", r.user}, {"truth", r.truth}};
    if (r.errored) {
      ++report.n_errored;
      row["errored"] = true;
      row["error"] = r.error;
    } else {
      outcomes.push_back({r.outcome.final_item, r.truth});
      row["final_item"] = r.outcome.final_item;
      row["accepted"] = r.outcome.accepted;
      row["iterations_used"] = r.outcome.iterations_used;
      row["hit"] = r.outcome.final_item == r.truth;
    }
    report.per_case.push_back(std::move(row));
  }
  report.has_hit_ratio = true;
  report.hit_ratio = hit_ratio_at_1(outcomes);  // errored cases excluded from the denominator
  if (results_out) *results_out = std::move(results);
  return report;
}

}  // namespace

std::vector<LoopCase> build_rec_cases(const Experiment& exp, int* n_skipped) {
  return build_rec_cases_with_policy(exp, exp.cfg.policy, n_skipped);
}

MetricsReport eval_recommendation(const Experiment& exp, std::vector<CaseResult>* results_out) {
  return drive_rec_eval(exp, exp.env(), "recommendation", results_out);
}

MetricsReport run_ablation(const Experiment& exp, std::vector<CaseResult>* results_out) {
  MetricsReport report = drive_rec_eval(exp, exp.env(), "ablation", results_out);
  report.extra = {{"use_rec_model", exp.cfg.use_rec_model},
                  {"use_reward_model", exp.cfg.use_reward_model}};
  return report;
}

// ---- user simulation ----

namespace {

AgentConfig user_agent_config_from(const Experiment& exp) {
  AgentConfig agent;
  agent.backend = exp.user_backend.get();
  agent.templates = exp.templates;
  agent.nouns = exp.nouns;
  agent.run_id = exp.run_id;
  agent.parse_retries = exp.cfg.parse_retries;
  agent.history_cap = exp.cfg.history_cap;
  agent.use_reward_model = exp.cfg.use_reward_model;
  agent.accept_threshold = exp.cfg.accept_threshold;
  return agent;
}

std::string stand_in_reason(const std::string& title) {
  return "The system suggests " + title + " as a match for your history.";
}

struct SimUserResult {
  UserId user = 0;
  bool skipped = false;
  bool errored = false;
  std::string error;
  Confusion confusion;
  std::vector<std::pair<bool, bool>> decisions;  // (label, decision)
  RecordLog log;
};

}  // namespace

MetricsReport eval_user_sim(const Experiment& exp, std::vector<RecordLog>* logs_out) {
  const RunConfig& cfg = exp.cfg;
  const LoopEnv env = exp.env();
  const AgentConfig user_agent = user_agent_config_from(exp);

  const std::vector<UserSequence>& users = exp.split.test;
  if (users.empty()) raise(ErrorKind::UndefinedMetric, "empty test split");

  std::vector<SimUserResult> rows(users.size());
  parallel_for(users.size(), cfg.concurrency, [&](std::size_t i) {
    const UserSequence& seq = users[i];
    SimUserResult& row = rows[i];
    row.user = seq.user;

    SimPanel panel;
    try {
      panel = build_sim_panel(seq, cfg.init_fraction, cfg.k_ratio, exp.catalog, cfg.seed);
    } catch (const Error& e) {
      row.skipped = true;
      row.error = e.what();
      return;
    }

    const std::size_t boundary = init_boundary(seq.items.size(), cfg.init_fraction);
    UserSequence history;
    history.user = seq.user;
    history.items.assign(seq.items.begin(), seq.items.begin() + boundary);
    history.timestamps.assign(seq.timestamps.begin(), seq.timestamps.begin() + boundary);

    AgentMemory user_memory{MemoryOwner::User, {}};
    try {
      if (cfg.sim_warmup_loop) {
        ItemId warm_target = seq.items[boundary];
        if (!cfg.sim_warmup_true_next) {
          // sampled variant: draw one of the panel positives
          std::vector<ItemId> positives;
          for (const auto& [id, label] : panel.items)
            if (label) positives.push_back(id);
          auto rng = make_rng(mix_seed(cfg.seed, 0xAB), static_cast<std::uint64_t>(seq.user));
          warm_target = positives[uniform_below(rng, positives.size())];
        }
        LoopCase warm;
        warm.user = seq.user;
        warm.history = history;
        warm.truth = warm_target;
        warm.phase = "warmup";
        warm.candidates = sample_candidates(seq, warm_target, exp.catalog,
                                            mix_seed(cfg.seed, 0x57A9), cfg.policy,
                                            cfg.candidate_size);
        const LoopOutcome warm_outcome = run_feedback_loop(env, warm, &row.log);
        for (const TurnRecord& turn : warm_outcome.transcript) {
          if (turn.accepted) continue;
          user_memory.append({turn.round, turn.item, turn.rec_reason, turn.user_reason});
        }
      }

      std::vector<ItemId> panel_ids;
      panel_ids.reserve(panel.items.size());
      for (const auto& [id, label] : panel.items) panel_ids.push_back(id);

      for (std::size_t p = 0; p < panel.items.size(); ++p) {
        const auto [item, label] = panel.items[p];
        RecTurn turn;
        turn.item = item;
        turn.reason = stand_in_reason(exp.catalog.title_of(item));

        std::optional<RewardScore> score;
        if (cfg.use_reward_model)
          score = reward_score(exp.reward_model, history.items, item, cfg.reward_temperature);

        JudgeCall call;
        call.memory = &user_memory;
        call.history = &history;
        call.candidate_items = &panel_ids;
        call.catalog = &exp.catalog;
        call.turn = &turn;
        call.score = score;
        call.ground_truth = label ? item : ItemId{-1};
        call.user = seq.user;
        call.phase = "panel";
        call.round = static_cast<int>(p);
        const JudgeResult judged = judge(user_agent, call, &row.log);

        if (judged.decision.accepted && label) row.confusion.tp += 1;
        else if (judged.decision.accepted && !label) row.confusion.fp += 1;
        else if (!judged.decision.accepted && label) row.confusion.fn += 1;
        else row.confusion.tn += 1;
        row.decisions.push_back({label, judged.decision.accepted});
      }
    } catch (const Error& e) {
      row.errored = true;
      row.error = e.what();
    }
  });

  MetricsReport report;
  report.task = "user-sim";
  report.seed = cfg.seed;
  report.config_snapshot = exp.snapshot;
  report.extra = {{"k_ratio", cfg.k_ratio},
                  {"init_fraction", cfg.init_fraction},
                  {"sim_warmup_loop", cfg.sim_warmup_loop}};

  Confusion total;
  std::vector<std::pair<bool, bool>> all_decisions;
  for (const SimUserResult& row : rows) {
    nlohmann::json entry = {{"user", row.user}};
    if (row.skipped) {
      ++report.n_skipped;
      entry["skipped"] = true;
      entry["error"] = row.error;
    } else if (row.errored) {
      ++report.n_cases;
      ++report.n_errored;
      entry["errored"] = true;
      entry["error"] = row.error;
    } else {
      ++report.n_cases;
      total.tp += row.confusion.tp;
      total.fp += row.confusion.fp;
      total.fn += row.confusion.fn;
      total.tn += row.confusion.tn;
      all_decisions.insert(all_decisions.end(), row.decisions.begin(), row.decisions.end());
      entry["confusion"] = {{"tp", row.confusion.tp}, {"fp", row.confusion.fp},
                            {"fn", row.confusion.fn}, {"tn", row.confusion.tn}};
    }
    report.per_case.push_back(std::move(entry));
    if (logs_out) logs_out->push_back(row.log);
  }

  if (total.total() < 1) raise(ErrorKind::UndefinedMetric, "no usable sim panels");
  report.has_confusion = true;
  report.confusion = total;
  report.scores = prf1(total);

  // recount from the raw decision log
  Confusion recount;
  for (const auto& [label, decision] : all_decisions) {
    if (decision && label) recount.tp += 1;
    else if (decision && !label) recount.fp += 1;
    else if (!decision && label) recount.fn += 1;
    else recount.tn += 1;
  }
  report.recount_ok = recount.tp == total.tp && recount.fp == total.fp &&
                      recount.fn == total.fn && recount.tn == total.tn;
  return report;
}

// ---- rerank baseline ----

Ranker make_scorer_ranker(const Experiment& exp) {
  return [&exp](const LoopCase& c, const std::vector<ItemId>& items, RecordLog*) {
    std::vector<ItemId> order = items;
    std::vector<double> scores;
    scores.reserve(items.size());
    for (ItemId id : items) scores.push_back(score(exp.rec_model, c.history.items, id));
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return items[a] < items[b];
    });
    std::vector<ItemId> out;
    out.reserve(items.size());
    for (std::size_t i : idx) out.push_back(items[i]);
    return out;
  };
}

Ranker make_user_agent_ranker(const Experiment& exp) {
  return [&exp](const LoopCase& c, const std::vector<ItemId>& items, RecordLog* log) {
    const AgentConfig user_agent = user_agent_config_from(exp);
    AgentMemory memory{MemoryOwner::User, {}};
    struct Judged {
      ItemId id;
      bool accepted;
      double normalized;
    };
    std::vector<Judged> judged;
    judged.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      RecTurn turn;
      turn.item = items[i];
      turn.reason = stand_in_reason(exp.catalog.title_of(items[i]));
      std::optional<RewardScore> score;
      if (exp.cfg.use_reward_model)
        score = reward_score(exp.reward_model, c.history.items, items[i],
                             exp.cfg.reward_temperature);
      JudgeCall call;
      call.memory = &memory;
      call.history = &c.history;
      call.candidate_items = &items;
      call.catalog = &exp.catalog;
      call.turn = &turn;
      call.score = score;
      call.ground_truth = c.truth;
      call.user = c.user;
      call.phase = "rerank-rank";
      call.round = static_cast<int>(i);
      const JudgeResult result = judge(user_agent, call, log);
      judged.push_back({items[i], result.decision.accepted,
                        score ? score->normalized : 0.0});
    }
    std::sort(judged.begin(), judged.end(), [](const Judged& a, const Judged& b) {
      if (a.accepted != b.accepted) return a.accepted;
      if (a.normalized != b.normalized) return a.normalized > b.normalized;
      return a.id < b.id;
    });
    std::vector<ItemId> out;
    out.reserve(judged.size());
    for (const Judged& j : judged) out.push_back(j.id);
    return out;
  };
}

MetricsReport rerank_baseline(const Experiment& exp, const Ranker& ranker,
                              std::vector<RecordLog>* logs_out) {
  constexpr int kShortlist = 5;
  const RunConfig& cfg = exp.cfg;
  const LoopEnv env = exp.env();
  int skipped = 0;
  const std::vector<LoopCase> cases = build_rec_cases(exp, &skipped);
  if (cases.empty()) raise(ErrorKind::UndefinedMetric, "no evaluable test cases");

  AgentConfig rec_agent;
  rec_agent.backend = exp.rec_backend.get();
  rec_agent.templates = exp.templates;
  rec_agent.nouns = exp.nouns;
  rec_agent.run_id = exp.run_id;
  rec_agent.parse_retries = cfg.parse_retries;
  rec_agent.history_cap = cfg.history_cap;

  struct RerankRow {
    UserId user = 0;
    ItemId truth = 0;
    bool errored = false;
    std::string error;
    ItemId final_item = 0;
    bool hit = false;
    RecordLog log;
  };
  std::vector<RerankRow> rows(cases.size());

  parallel_for(cases.size(), cfg.concurrency, [&](std::size_t i) {
    const LoopCase& c = cases[i];
    RerankRow& row = rows[i];
    row.user = c.user;
    row.truth = c.truth;
    try {
      std::optional<ItemId> model_item;
      if (cfg.use_rec_model)
        model_item = top_k(exp.rec_model, c.history.items, c.candidates, 1).front();
      const ScorerArtifact* view_model = env.view_model;
      const std::vector<double> view_scores =
          score_candidates(*view_model, c.history.items, c.candidates);

      AgentMemory rec_memory{MemoryOwner::Recommendation, {}};
      std::vector<ItemId> shortlist;
      std::vector<ItemId> exclusion;
      for (int r = 1; r <= kShortlist; ++r) {
        RecCall call;
        call.memory = &rec_memory;
        call.history = &c.history;
        call.candidate_items = &c.candidates.items;
        call.catalog = &exp.catalog;
        call.model_item = model_item;
        call.candidate_scores = view_scores;
        call.rejected = exclusion;
        call.user = c.user;
        call.phase = "rerank";
        call.round = r;
        const RecResult rec = recommend(rec_agent, call, &row.log);
        if (std::find(shortlist.begin(), shortlist.end(), rec.turn.item) != shortlist.end()) break;
        shortlist.push_back(rec.turn.item);
        exclusion.push_back(rec.turn.item);
      }
      if (static_cast<int>(shortlist.size()) < kShortlist)
        raise(ErrorKind::Sampling, "shortlist shrank below " + std::to_string(kShortlist) +
                                       " items after parse failures");
      const std::vector<ItemId> ranked = ranker(c, shortlist, &row.log);
      if (ranked.empty()) raise(ErrorKind::Precondition, "ranker returned an empty order");
      row.final_item = ranked.front();
      row.hit = row.final_item == c.truth;
    } catch (const Error& e) {
      row.errored = true;
      row.error = e.what();
    }
  });

  MetricsReport report;
  report.task = "rerank";
  report.seed = cfg.seed;
  report.config_snapshot = exp.snapshot;
  report.n_cases = static_cast<int>(cases.size());
  report.n_skipped = skipped;

  std::vector<std::pair<ItemId, ItemId>> outcomes;
  for (const RerankRow& row : rows) {
    nlohmann::json entry = {{"user", row.user}, {"truth", row.truth}};
    if (row.errored) {
      ++report.n_errored;
      entry["errored"] = true;
      entry["error"] = row.error;
    } else {
      outcomes.push_back({row.final_item, row.truth});
      entry["final_item"] = row.final_item;
      entry["hit"] = row.hit;
    }
    report.per_case.push_back(std::move(entry));
    if (logs_out) logs_out->push_back(row.log);
  }
  report.has_hit_ratio = true;
  report.hit_ratio = hit_ratio_at_1(outcomes);
  return report;
}

// ---- audits ----

std::map<ItemId, int> popularity_tiers(const std::map<ItemId, std::int64_t>& counts) {
  std::vector<std::pair<ItemId, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t n = ranked.size();
  const std::size_t top_end = static_cast<std::size_t>(0.2 * static_cast<double>(n));
  const std::size_t mid_end = static_cast<std::size_t>(0.5 * static_cast<double>(n));
  std::map<ItemId, int> tiers;
  for (std::size_t i = 0; i < n; ++i)
    tiers[ranked[i].first] = i < top_end ? 0 : (i < mid_end ? 1 : 2);
  return tiers;
}

nlohmann::json PopularityAudit::to_json() const {
  nlohmann::json by_epoch = nlohmann::json::object();
  for (const auto& [epoch, shares] : shares_by_epoch)
    by_epoch[std::to_string(epoch)] = {{"top20", shares[0]},
                                       {"mid20to50", shares[1]},
                                       {"bottom50", shares[2]}};
  return {{"task", "popularity-audit"},
          {"by_epoch", std::move(by_epoch)},
          {"baseline", {{"top20", baseline_shares[0]},
                        {"mid20to50", baseline_shares[1]},
                        {"bottom50", baseline_shares[2]}}},
          {"config", config_snapshot}};
}

PopularityAudit audit_popularity(const Experiment& exp, const std::vector<int>& max_epochs) {
  const auto counts = popularity_counts(exp.split);
  const auto tiers = popularity_tiers(counts);
  const auto classify = [&](ItemId id) {
    auto it = tiers.find(id);
    return it == tiers.end() ? 2 : it->second;  // unseen items sit in the bottom tier
  };

  int skipped = 0;
  const std::vector<LoopCase> cases = build_rec_cases(exp, &skipped);
  if (cases.empty()) raise(ErrorKind::UndefinedMetric, "no evaluable test cases");

  PopularityAudit audit;
  audit.config_snapshot = exp.snapshot;

  for (int epoch : max_epochs) {
    LoopEnv env = exp.env();
    env.cfg.max_epoch = epoch;
    const std::vector<CaseResult> results = run_many(env, cases, exp.cfg.concurrency);
    std::array<std::int64_t, 3> tally{0, 0, 0};
    std::int64_t usable = 0;
    for (const CaseResult& r : results) {
      if (r.errored) continue;
      tally[classify(r.outcome.final_item)] += 1;
      ++usable;
    }
    if (usable == 0) raise(ErrorKind::UndefinedMetric, "all cases errored in popularity audit");
    std::array<double, 3> shares;
    for (int t = 0; t < 3; ++t)
      shares[t] = static_cast<double>(tally[t]) / static_cast<double>(usable);
    audit.shares_by_epoch[epoch] = shares;
  }

  std::array<std::int64_t, 3> base{0, 0, 0};
  for (const LoopCase& c : cases) {
    const ItemId top = top_k(exp.rec_model, c.history.items, c.candidates, 1).front();
    base[classify(top)] += 1;
  }
  for (int t = 0; t < 3; ++t)
    audit.baseline_shares[t] = static_cast<double>(base[t]) / static_cast<double>(cases.size());
  return audit;
}

nlohmann::json PositionAudit::to_json() const {
  nlohmann::json cells_json = nlohmann::json::object();
  for (const auto& [policy, by_epoch] : cells) {
    nlohmann::json epochs = nlohmann::json::object();
    for (const auto& [epoch, cell] : by_epoch) {
      nlohmann::json hits = nlohmann::json::array();
      for (const auto& [user, hit] : cell.case_hits) hits.push_back({{"user", user}, {"hit", hit}});
      epochs[std::to_string(epoch)] = {{"hit_ratio_at_1", cell.hit_ratio},
                                       {"case_hits", std::move(hits)}};
    }
    cells_json[policy] = std::move(epochs);
  }
  return {{"task", "position-audit"}, {"cells", std::move(cells_json)},
          {"config", config_snapshot}};
}

PositionAudit audit_position(const Experiment& exp, const std::vector<int>& max_epochs) {
  PositionAudit audit;
  audit.config_snapshot = exp.snapshot;
  for (OrderingPolicy policy :
       {OrderingPolicy::First, OrderingPolicy::Random, OrderingPolicy::Last}) {
    int skipped = 0;
    // same seed for every policy: the candidate sets match, only order differs
    const std::vector<LoopCase> cases = build_rec_cases_with_policy(exp, policy, &skipped);
    if (cases.empty()) raise(ErrorKind::UndefinedMetric, "no evaluable test cases");
    for (int epoch : max_epochs) {
      LoopEnv env = exp.env();
      env.cfg.policy = policy;
      env.cfg.max_epoch = epoch;
      const std::vector<CaseResult> results = run_many(env, cases, exp.cfg.concurrency);
      PositionAudit::Cell cell;
      std::vector<std::pair<ItemId, ItemId>> outcomes;
      for (const CaseResult& r : results) {
        if (r.errored) continue;
        const bool hit = r.outcome.final_item == r.truth;
        cell.case_hits.push_back({r.user, hit});
        outcomes.push_back({r.outcome.final_item, r.truth});
      }
      cell.hit_ratio = hit_ratio_at_1(outcomes);
      audit.cells[to_string(policy)][epoch] = std::move(cell);
    }
  }
  return audit;
}

}  // namespace afl
