#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "afl/config.hpp"
#include "afl/error.hpp"
#include "afl/rng.hpp"
#include "afl/synth.hpp"

namespace fs = std::filesystem;
using namespace afl;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string dataset;
  std::string run_id;
  std::string replay_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int max_epoch = -1;
  int k_ratio = -1;
  std::string policy;
  std::string backend_rec;
  std::string backend_user;
  bool no_rec_model = false;
  bool no_reward_model = false;
  int test_subsample = -1;
  int concurrency = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Config file (JSON)")->required();
  cmd->add_option("--dataset", args.dataset, "Dataset name from the config registry");
  cmd->add_option("--seed", args.seed, "Global seed override");
  cmd->add_option("--max-epoch", args.max_epoch, "Feedback-loop iteration bound");
  cmd->add_option("--k", args.k_ratio, "Sim-panel negatives per positive (1, 3 or 9)");
  cmd->add_option("--policy", args.policy, "Positive placement: first|random|last");
  cmd->add_option("--backend-rec", args.backend_rec, "Rec-agent backend kind");
  cmd->add_option("--backend-user", args.backend_user, "User-agent backend kind");
  cmd->add_flag("--no-rec-model", args.no_rec_model, "Ablate the recommendation model");
  cmd->add_flag("--no-reward-model", args.no_reward_model, "Ablate the reward model");
  cmd->add_option("--test-subsample", args.test_subsample, "Evaluate on N sampled test cases");
  cmd->add_option("--concurrency", args.concurrency, "Concurrent loop runs");
  cmd->add_option("--replay", args.replay_path, "Replay transcript instead of live backends");
  cmd->add_option("--run-id", args.run_id, "Run directory name (default: timestamp + config hash)");
  cmd->add_option("--out", args.out_dir, "Output directory root (default from config)");
}

ConfigFile load_with_overrides(const CommonArgs& args) {
  ConfigFile cfg = load_config(args.config_path);
  if (!args.dataset.empty()) cfg.run.dataset_name = args.dataset;
  if (args.seed >= 0) cfg.run.seed = static_cast<std::uint64_t>(args.seed);
  if (args.max_epoch > 0) cfg.run.max_epoch = args.max_epoch;
  if (args.k_ratio > 0) cfg.run.k_ratio = args.k_ratio;
  if (!args.policy.empty()) cfg.run.policy = ordering_policy_from_string(args.policy);
  if (!args.backend_rec.empty()) cfg.backend_rec.kind = backend_kind_from_string(args.backend_rec);
  if (!args.backend_user.empty())
    cfg.backend_user.kind = backend_kind_from_string(args.backend_user);
  if (args.no_rec_model) cfg.run.use_rec_model = false;
  if (args.no_reward_model) cfg.run.use_reward_model = false;
  if (args.test_subsample >= 0) cfg.run.test_subsample = args.test_subsample;
  if (args.concurrency > 0) cfg.run.concurrency = args.concurrency;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  cfg.run.backend_rec = cfg.backend_rec.kind;
  cfg.run.backend_user = cfg.backend_user.kind;
  validate(cfg.run);
  return cfg;
}

std::string make_run_id(const ConfigFile& cfg, const std::string& requested) {
  if (!requested.empty()) return requested;
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
  return std::string(stamp) + "-" + config_hash(cfg).substr(0, 8);
}

fs::path prepare_run_dir(const ConfigFile& cfg, const std::string& run_id) {
  fs::path dir = fs::path(cfg.output_dir) / run_id;
  fs::create_directories(dir);
  return dir;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Experiment prepare_experiment(const ConfigFile& cfg, const CommonArgs& args,
                              const std::string& run_id) {
  Experiment exp = build_experiment(cfg, /*require_artifacts=*/args.replay_path.empty());
  exp.run_id = run_id;
  if (!args.replay_path.empty()) use_replay_backends(exp, args.replay_path);
  return exp;
}

void write_case_transcripts(const fs::path& dir, const Experiment& exp,
                            const std::vector<CaseResult>& results) {
  std::vector<const RecordLog*> logs;
  logs.reserve(results.size());
  for (const auto& r : results) logs.push_back(&r.records);
  write_transcript((dir / "transcript.jsonl").string(),
                   header_record(exp.run_id, exp.snapshot), logs);
}

void write_record_logs(const fs::path& dir, const Experiment& exp,
                       const std::vector<RecordLog>& logs) {
  std::vector<const RecordLog*> ptrs;
  ptrs.reserve(logs.size());
  for (const auto& log : logs) ptrs.push_back(&log);
  write_transcript((dir / "transcript.jsonl").string(),
                   header_record(exp.run_id, exp.snapshot), ptrs);
}

std::vector<int> parse_epoch_list(const std::string& epochs) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= epochs.size()) {
    const std::size_t comma = epochs.find(',', start);
    const std::string tok = epochs.substr(start, comma == std::string::npos ? std::string::npos
                                                                            : comma - start);
    if (!tok.empty()) out.push_back(std::stoi(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) raise(ErrorKind::Config, "empty --epochs list");
  return out;
}

int cmd_synth(const std::string& out_dir, int users, int items, std::uint64_t seed) {
  fs::create_directories(out_dir);
  const InteractionLog log = make_planted_log(users, items, seed);
  const std::string interactions = (fs::path(out_dir) / "interactions.tsv").string();
  const std::string catalog = (fs::path(out_dir) / "catalog.tsv").string();
  write_log_tsv(log, interactions, catalog);
  std::cout << "wrote " << interactions << " (" << log.events.size() << " events, "
            << log.user_order.size() << " users) and " << catalog << " ("
            << log.catalog.size() << " items)\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const ConfigFile cfg = load_with_overrides(args);
  const DatasetEntry& dataset = active_dataset(cfg);
  const InteractionLog log = load_interactions(dataset.interactions, dataset.catalog);
  const DatasetSplit split = chronological_split(log, cfg.run.split);

  const std::string run_id = make_run_id(cfg, args.run_id);
  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_split_manifest(split, (dir / "split_manifest.tsv").string());
  write_json_file(dir / "config.json", config_snapshot(cfg));

  const auto train_one = [&](const char* name, ScorerKind kind, const std::string& artifact_path,
                             const Hyperparams& hyper, std::uint64_t stream) {
    if (artifact_path.empty())
      raise(ErrorKind::Config, std::string("models.") + name + ".artifact path is required");
    auto [artifact, report] = train(kind, split.train, hyper, mix_seed(cfg.run.seed, stream));
    save_artifact(artifact, artifact_path);
    write_json_file(artifact_path + ".train.json",
                    nlohmann::json{{"seed", report.seed},
                                   {"epoch_losses", report.epoch_losses},
                                   {"wall_clock_seconds", report.wall_clock_seconds}});
    std::cout << name << ": kind=" << to_string(kind) << " vocab=" << artifact.vocab.size()
              << " final_loss=" << format_fixed(artifact.meta.final_loss, 6) << " -> "
              << artifact_path << "\n";
  };
  train_one("rec", cfg.run.rec_model_kind, cfg.rec_artifact, cfg.rec_hyper, 1);
  train_one("reward", cfg.run.reward_model_kind, cfg.reward_artifact, cfg.reward_hyper, 2);
  if (!cfg.fallback_artifact.empty())
    train_one("fallback", cfg.fallback_kind, cfg.fallback_artifact, cfg.fallback_hyper, 3);
  std::cout << "split: train=" << split.train.size() << " val=" << split.val.size()
            << " test=" << split.test.size() << "\n";
  return 0;
}

int cmd_eval_rec(const CommonArgs& args, bool as_ablation) {
  const ConfigFile cfg = load_with_overrides(args);
  const std::string run_id = make_run_id(cfg, args.run_id);
  Experiment exp = prepare_experiment(cfg, args, run_id);
  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_json_file(dir / "config.json", exp.snapshot);

  std::vector<CaseResult> results;
  const MetricsReport report =
      as_ablation ? run_ablation(exp, &results) : eval_recommendation(exp, &results);
  write_case_transcripts(dir, exp, results);
  write_report(report, (dir / "report.json").string());
  std::cout << report.task << ": hit_ratio_at_1=" << format_fixed(report.hit_ratio, 4)
            << " cases=" << report.n_cases << " errored=" << report.n_errored
            << " skipped=" << report.n_skipped << "\n";
  std::cout << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_eval_sim(const CommonArgs& args) {
  const ConfigFile cfg = load_with_overrides(args);
  const std::string run_id = make_run_id(cfg, args.run_id);
  Experiment exp = prepare_experiment(cfg, args, run_id);
  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_json_file(dir / "config.json", exp.snapshot);

  std::vector<RecordLog> logs;
  const MetricsReport report = eval_user_sim(exp, &logs);
  write_record_logs(dir, exp, logs);
  write_report(report, (dir / "report.json").string());
  std::cout << "user-sim: precision=" << format_fixed(report.scores.precision, 4)
            << " recall=" << format_fixed(report.scores.recall, 4)
            << " f1=" << format_fixed(report.scores.f1, 4) << " users=" << report.n_cases
            << " errored=" << report.n_errored << " skipped=" << report.n_skipped << "\n";
  std::cout << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_rerank(const CommonArgs& args, const std::string& ranker_name) {
  const ConfigFile cfg = load_with_overrides(args);
  const std::string run_id = make_run_id(cfg, args.run_id);
  Experiment exp = prepare_experiment(cfg, args, run_id);
  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_json_file(dir / "config.json", exp.snapshot);

  Ranker ranker;
  if (ranker_name == "scorer") ranker = make_scorer_ranker(exp);
  else if (ranker_name == "user-agent") ranker = make_user_agent_ranker(exp);
  else raise(ErrorKind::Config, "unknown ranker '" + ranker_name + "'");

  std::vector<RecordLog> logs;
  MetricsReport report = rerank_baseline(exp, ranker, &logs);
  report.extra = {{"ranker", ranker_name}};
  write_record_logs(dir, exp, logs);
  write_report(report, (dir / "report.json").string());
  std::cout << "rerank(" << ranker_name
            << "): hit_ratio_at_1=" << format_fixed(report.hit_ratio, 4)
            << " cases=" << report.n_cases << " errored=" << report.n_errored << "\n";
  std::cout << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_audit_popularity(const CommonArgs& args, const std::string& epochs) {
  const ConfigFile cfg = load_with_overrides(args);
  const std::string run_id = make_run_id(cfg, args.run_id);
  Experiment exp = prepare_experiment(cfg, args, run_id);
  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_json_file(dir / "config.json", exp.snapshot);

  const PopularityAudit audit = audit_popularity(exp, parse_epoch_list(epochs));
  write_json_file(dir / "popularity_audit.json", audit.to_json());
  for (const auto& [epoch, shares] : audit.shares_by_epoch)
    std::cout << "max_epoch=" << epoch << ": top20=" << format_fixed(shares[0], 4)
              << " mid20to50=" << format_fixed(shares[1], 4)
              << " bottom50=" << format_fixed(shares[2], 4) << "\n";
  std::cout << "baseline: top20=" << format_fixed(audit.baseline_shares[0], 4)
            << " mid20to50=" << format_fixed(audit.baseline_shares[1], 4)
            << " bottom50=" << format_fixed(audit.baseline_shares[2], 4) << "\n";
  std::cout << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_audit_position(const CommonArgs& args, const std::string& epochs) {
  const ConfigFile cfg = load_with_overrides(args);
  const std::string run_id = make_run_id(cfg, args.run_id);
  Experiment exp = prepare_experiment(cfg, args, run_id);
  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_json_file(dir / "config.json", exp.snapshot);

  const PositionAudit audit = audit_position(exp, parse_epoch_list(epochs));
  write_json_file(dir / "position_audit.json", audit.to_json());
  for (const auto& [policy, by_epoch] : audit.cells) {
    std::cout << policy << ":";
    for (const auto& [epoch, cell] : by_epoch)
      std::cout << " K=" << epoch << " hr=" << format_fixed(cell.hit_ratio, 4);
    std::cout << "\n";
  }
  std::cout << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_run(const CommonArgs& args, std::int64_t user, bool verbose) {
  const ConfigFile cfg = load_with_overrides(args);
  const std::string run_id = make_run_id(cfg, args.run_id);
  Experiment exp = prepare_experiment(cfg, args, run_id);

  int skipped = 0;
  const std::vector<LoopCase> cases = build_rec_cases(exp, &skipped);
  const LoopCase* chosen = nullptr;
  for (const LoopCase& c : cases)
    if (c.user == user) chosen = &c;
  if (!chosen) raise(ErrorKind::Config, "user " + std::to_string(user) + " not in the test split");

  RecordLog log;
  const LoopOutcome outcome = run_feedback_loop(exp.env(), *chosen, &log);

  const fs::path dir = prepare_run_dir(cfg, run_id);
  write_json_file(dir / "config.json", exp.snapshot);
  write_transcript((dir / "transcript.jsonl").string(), header_record(run_id, exp.snapshot),
                   {&log});

  const auto title = [&](ItemId id) { return exp.catalog.title_of(id); };
  if (verbose) {
    for (const TurnRecord& turn : outcome.transcript) {
      std::cout << "Round " << turn.round << ":\n";
      if (turn.model_item) std::cout << "  model suggestion: " << title(*turn.model_item) << "\n";
      std::cout << "  recommended: " << title(turn.item) << "\n";
      std::cout << "  rec reason: " << turn.rec_reason << "\n";
      if (turn.score)
        std::cout << "  reward score: raw=" << format_fixed(turn.score->raw, 4)
                  << " normalized=" << format_fixed(turn.score->normalized, 4) << "\n";
      std::cout << "  decision: " << (turn.accepted ? "yes" : "no") << "\n";
      std::cout << "  user reason: " << turn.user_reason << "\n";
    }
  }
  std::cout << "final=" << title(outcome.final_item)
            << " accepted=" << (outcome.accepted ? "true" : "false")
            << " iterations=" << outcome.iterations_used
            << " hit=" << (outcome.final_item == chosen->truth ? "true" : "false") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic feedback loop bench"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write the bundled synthetic dataset as TSV");
  std::string synth_out = "data/synthetic";
  int synth_users = 200;
  int synth_items = 500;
  std::int64_t synth_seed = 20240101;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--users", synth_users, "User count");
  synth->add_option("--items", synth_items, "Item count");
  synth->add_option("--seed", synth_seed, "Generator seed");

  CommonArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train scorers and write artifacts");
  add_common(train_cmd, train_args);

  CommonArgs eval_rec_args;
  auto* eval_rec = app.add_subcommand("eval-rec", "Recommendation evaluation (HitRatio@1)");
  add_common(eval_rec, eval_rec_args);

  CommonArgs eval_sim_args;
  auto* eval_sim = app.add_subcommand("eval-sim", "User-simulation evaluation (P/R/F1)");
  add_common(eval_sim, eval_sim_args);

  CommonArgs rerank_args;
  std::string ranker_name = "scorer";
  auto* rerank = app.add_subcommand("rerank", "Shortlist-plus-ranker baseline");
  add_common(rerank, rerank_args);
  rerank->add_option("--ranker", ranker_name, "scorer | user-agent");

  CommonArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Ablation run (honours --no-*-model flags)");
  add_common(ablate, ablate_args);

  CommonArgs pop_args;
  std::string pop_epochs = "1,2,3,4";
  auto* audit_pop = app.add_subcommand("audit-popularity", "Popularity-tier audit");
  add_common(audit_pop, pop_args);
  audit_pop->add_option("--epochs", pop_epochs, "Comma-separated max_epoch values");

  CommonArgs pos_args;
  std::string pos_epochs = "1,2,3,4";
  auto* audit_pos = app.add_subcommand("audit-position", "First/Random/Last position audit");
  add_common(audit_pos, pos_args);
  audit_pos->add_option("--epochs", pos_epochs, "Comma-separated max_epoch values");

  CommonArgs run_args;
  std::int64_t run_user = -1;
  bool run_verbose = false;
  auto* run_cmd = app.add_subcommand("run", "Run one feedback loop and print the transcript");
  add_common(run_cmd, run_args);
  run_cmd->add_option("--user", run_user, "Test-split user id")->required();
  run_cmd->add_flag("--verbose", run_verbose, "Print every round");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_users, synth_items,
                       static_cast<std::uint64_t>(synth_seed));
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_rec->parsed()) return cmd_eval_rec(eval_rec_args, false);
    if (eval_sim->parsed()) return cmd_eval_sim(eval_sim_args);
    if (rerank->parsed()) return cmd_rerank(rerank_args, ranker_name);
    if (ablate->parsed()) return cmd_eval_rec(ablate_args, true);
    if (audit_pop->parsed()) return cmd_audit_popularity(pop_args, pop_epochs);
    if (audit_pos->parsed()) return cmd_audit_position(pos_args, pos_epochs);
    if (run_cmd->parsed()) return cmd_run(run_args, run_user, run_verbose);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
