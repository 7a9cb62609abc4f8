#include "afl/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "afl/error.hpp"
#include "afl/rng.hpp"

namespace afl {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  raise(ErrorKind::Config, path + ": " + what);
}

void check_object(const json& j, const std::string& path) {
  if (!j.is_object()) bad(path, "expected an object");
}

void check_allowed(const json& obj, const std::set<std::string>& allowed,
                   const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) bad(path + "." + it.key(), "unknown key");
}

double get_number(const json& obj, const char* key, double fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number()) bad(path + "." + key, "expected a number");
  return obj.at(key).get<double>();
}

std::int64_t get_int(const json& obj, const char* key, std::int64_t fallback,
                     const std::string& path) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number_integer()) bad(path + "." + key, "expected an integer");
  return obj.at(key).get<std::int64_t>();
}

bool get_bool(const json& obj, const char* key, bool fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) bad(path + "." + key, "expected a boolean");
  return obj.at(key).get<bool>();
}

std::string get_string(const json& obj, const char* key, const std::string& fallback,
                       const std::string& path) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) bad(path + "." + key, "expected a string");
  return obj.at(key).get<std::string>();
}

Hyperparams parse_hyper(const json& obj, const Hyperparams& defaults, const std::string& path) {
  check_object(obj, path);
  check_allowed(obj, {"dim", "learning_rate", "l2", "epochs", "window"}, path);
  Hyperparams h = defaults;
  h.dim = static_cast<int>(get_int(obj, "dim", h.dim, path));
  h.learning_rate = get_number(obj, "learning_rate", h.learning_rate, path);
  h.l2 = get_number(obj, "l2", h.l2, path);
  h.epochs = static_cast<int>(get_int(obj, "epochs", h.epochs, path));
  h.window = static_cast<int>(get_int(obj, "window", h.window, path));
  return h;
}

BackendSpec parse_backend(const json& obj, BackendKind default_kind, const std::string& path) {
  check_object(obj, path);
  check_allowed(obj,
                {"kind", "base_url", "model", "api_key_env", "retry_budget", "backoff_base_ms",
                 "inflight_limit", "timeout_ms", "tau", "replay_path"},
                path);
  BackendSpec spec;
  spec.kind = default_kind;
  if (obj.contains("kind")) {
    try {
      spec.kind = backend_kind_from_string(get_string(obj, "kind", "", path));
    } catch (const Error&) {
      bad(path + ".kind", "unknown backend kind '" + get_string(obj, "kind", "", path) + "'");
    }
  }
  spec.base_url = get_string(obj, "base_url", spec.base_url, path);
  spec.model = get_string(obj, "model", spec.model, path);
  spec.api_key_env = get_string(obj, "api_key_env", spec.api_key_env, path);
  spec.retry_budget = static_cast<int>(get_int(obj, "retry_budget", spec.retry_budget, path));
  spec.backoff_base_ms =
      static_cast<int>(get_int(obj, "backoff_base_ms", spec.backoff_base_ms, path));
  spec.inflight_limit =
      static_cast<int>(get_int(obj, "inflight_limit", spec.inflight_limit, path));
  spec.timeout_ms = static_cast<int>(get_int(obj, "timeout_ms", spec.timeout_ms, path));
  spec.tau = get_number(obj, "tau", spec.tau, path);
  spec.replay_path = get_string(obj, "replay_path", spec.replay_path, path);
  return spec;
}

DomainNouns parse_nouns(const json& obj, const DomainNouns& defaults, const std::string& path) {
  check_object(obj, path);
  check_allowed(obj,
                {"item_noun", "item_noun_plural", "persona", "verb_past", "verb_future",
                 "history_noun", "records_noun"},
                path);
  DomainNouns n = defaults;
  n.item_noun = get_string(obj, "item_noun", n.item_noun, path);
  n.item_noun_plural = get_string(obj, "item_noun_plural", n.item_noun_plural, path);
  n.persona = get_string(obj, "persona", n.persona, path);
  n.verb_past = get_string(obj, "verb_past", n.verb_past, path);
  n.verb_future = get_string(obj, "verb_future", n.verb_future, path);
  n.history_noun = get_string(obj, "history_noun", n.history_noun, path);
  n.records_noun = get_string(obj, "records_noun", n.records_noun, path);
  return n;
}

json nouns_to_json(const DomainNouns& n) {
  return {{"item_noun", n.item_noun},
          {"item_noun_plural", n.item_noun_plural},
          {"persona", n.persona},
          {"verb_past", n.verb_past},
          {"verb_future", n.verb_future},
          {"history_noun", n.history_noun},
          {"records_noun", n.records_noun}};
}

json backend_to_json(const BackendSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"base_url", s.base_url},
          {"model", s.model},
          {"api_key_env", s.api_key_env},
          {"retry_budget", s.retry_budget},
          {"backoff_base_ms", s.backoff_base_ms},
          {"inflight_limit", s.inflight_limit},
          {"timeout_ms", s.timeout_ms},
          {"tau", s.tau},
          {"replay_path", s.replay_path}};
}

json hyper_to_json(const Hyperparams& h) {
  return {{"dim", h.dim},
          {"learning_rate", h.learning_rate},
          {"l2", h.l2},
          {"epochs", h.epochs},
          {"window", h.window}};
}

}  // namespace

ConfigFile default_config() {
  ConfigFile cfg;
  cfg.backend_rec.kind = BackendKind::ScriptedRec;
  cfg.backend_user.kind = BackendKind::OracleUser;
  return cfg;
}

ConfigFile parse_config_json(const json& j) {
  check_object(j, "$");
  check_allowed(j,
                {"seed", "split", "max_epoch", "candidate_size", "k_ratio", "ordering_policy",
                 "use_rec_model", "use_reward_model", "concurrency", "retry_budget",
                 "parse_retries", "history_cap", "init_fraction", "reward_temperature",
                 "accept_threshold", "refresh_model_suggestion", "sim_warmup_loop",
                 "sim_warmup_true_next", "test_subsample", "dataset", "datasets", "models",
                 "backends", "output_dir"},
                "$");

  ConfigFile cfg = default_config();
  RunConfig& run = cfg.run;

  if (j.contains("seed")) {
    if (!j.at("seed").is_number_integer()) bad("$.seed", "expected an integer");
    run.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("split")) {
    const json& split = j.at("split");
    check_object(split, "$.split");
    check_allowed(split, {"train", "val", "test"}, "$.split");
    run.split.train = get_number(split, "train", run.split.train, "$.split");
    run.split.val = get_number(split, "val", run.split.val, "$.split");
    run.split.test = get_number(split, "test", run.split.test, "$.split");
  }
  run.max_epoch = static_cast<int>(get_int(j, "max_epoch", run.max_epoch, "$"));
  run.candidate_size = static_cast<int>(get_int(j, "candidate_size", run.candidate_size, "$"));
  run.k_ratio = static_cast<int>(get_int(j, "k_ratio", run.k_ratio, "$"));
  if (j.contains("ordering_policy"))
    run.policy = ordering_policy_from_string(get_string(j, "ordering_policy", "random", "$"));
  run.use_rec_model = get_bool(j, "use_rec_model", run.use_rec_model, "$");
  run.use_reward_model = get_bool(j, "use_reward_model", run.use_reward_model, "$");
  run.concurrency = static_cast<int>(get_int(j, "concurrency", run.concurrency, "$"));
  run.retry_budget = static_cast<int>(get_int(j, "retry_budget", run.retry_budget, "$"));
  run.parse_retries = static_cast<int>(get_int(j, "parse_retries", run.parse_retries, "$"));
  run.history_cap = static_cast<int>(get_int(j, "history_cap", run.history_cap, "$"));
  run.init_fraction = get_number(j, "init_fraction", run.init_fraction, "$");
  run.reward_temperature = get_number(j, "reward_temperature", run.reward_temperature, "$");
  run.accept_threshold = get_number(j, "accept_threshold", run.accept_threshold, "$");
  run.refresh_model_suggestion =
      get_bool(j, "refresh_model_suggestion", run.refresh_model_suggestion, "$");
  run.sim_warmup_loop = get_bool(j, "sim_warmup_loop", run.sim_warmup_loop, "$");
  run.sim_warmup_true_next = get_bool(j, "sim_warmup_true_next", run.sim_warmup_true_next, "$");
  run.test_subsample = static_cast<int>(get_int(j, "test_subsample", run.test_subsample, "$"));
  run.dataset_name = get_string(j, "dataset", run.dataset_name, "$");

  if (j.contains("datasets")) {
    const json& datasets = j.at("datasets");
    check_object(datasets, "$.datasets");
    for (auto it = datasets.begin(); it != datasets.end(); ++it) {
      const std::string path = "$.datasets." + it.key();
      const json& entry = it.value();
      check_object(entry, path);
      check_allowed(entry, {"interactions", "catalog", "nouns", "rec_template", "user_template"},
                    path);
      DatasetEntry ds;
      ds.name = it.key();
      ds.interactions = get_string(entry, "interactions", "", path);
      ds.catalog = get_string(entry, "catalog", "", path);
      ds.nouns = nouns_for_dataset(it.key());
      if (entry.contains("nouns")) ds.nouns = parse_nouns(entry.at("nouns"), ds.nouns, path + ".nouns");
      ds.rec_template = get_string(entry, "rec_template", "", path);
      ds.user_template = get_string(entry, "user_template", "", path);
      cfg.datasets[ds.name] = std::move(ds);
    }
  }

  if (j.contains("models")) {
    const json& models = j.at("models");
    check_object(models, "$.models");
    check_allowed(models, {"rec", "reward", "fallback"}, "$.models");
    const auto parse_model = [&](const char* name, ScorerKind& kind, std::string& artifact,
                                 Hyperparams& hyper) {
      if (!models.contains(name)) return;
      const std::string path = std::string("$.models.") + name;
      const json& m = models.at(name);
      check_object(m, path);
      check_allowed(m, {"kind", "artifact", "hyper"}, path);
      if (m.contains("kind")) {
        try {
          kind = scorer_kind_from_string(get_string(m, "kind", "", path));
        } catch (const Error&) {
          bad(path + ".kind", "unknown scorer kind '" + get_string(m, "kind", "", path) + "'");
        }
      }
      artifact = get_string(m, "artifact", artifact, path);
      if (m.contains("hyper")) hyper = parse_hyper(m.at("hyper"), hyper, path + ".hyper");
    };
    parse_model("rec", run.rec_model_kind, cfg.rec_artifact, cfg.rec_hyper);
    parse_model("reward", run.reward_model_kind, cfg.reward_artifact, cfg.reward_hyper);
    parse_model("fallback", cfg.fallback_kind, cfg.fallback_artifact, cfg.fallback_hyper);
  }

  if (j.contains("backends")) {
    const json& backends = j.at("backends");
    check_object(backends, "$.backends");
    check_allowed(backends, {"rec", "user"}, "$.backends");
    if (backends.contains("rec"))
      cfg.backend_rec = parse_backend(backends.at("rec"), BackendKind::ScriptedRec, "$.backends.rec");
    if (backends.contains("user"))
      cfg.backend_user = parse_backend(backends.at("user"), BackendKind::OracleUser, "$.backends.user");
  }
  cfg.output_dir = get_string(j, "output_dir", cfg.output_dir, "$");

  if (cfg.backend_rec.kind == BackendKind::OracleUser ||
      cfg.backend_rec.kind == BackendKind::ThresholdUser)
    bad("$.backends.rec.kind", "user-side backend kind on the rec side");
  if (cfg.backend_user.kind == BackendKind::ScriptedRec)
    bad("$.backends.user.kind", "rec-side backend kind on the user side");

  run.backend_rec = cfg.backend_rec.kind;
  run.backend_user = cfg.backend_user.kind;
  validate(run);
  return cfg;
}

ConfigFile load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Config, "cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorKind::Config, path + ": " + e.what());
  }
  return parse_config_json(j);
}

nlohmann::json config_snapshot(const ConfigFile& cfg) {
  json datasets = json::object();
  for (const auto& [name, entry] : cfg.datasets)
    datasets[name] = {{"interactions", entry.interactions},
                      {"catalog", entry.catalog},
                      {"nouns", nouns_to_json(entry.nouns)},
                      {"rec_template", entry.rec_template},
                      {"user_template", entry.user_template}};
  return {{"run", cfg.run},
          {"datasets", std::move(datasets)},
          {"backends", {{"rec", backend_to_json(cfg.backend_rec)},
                        {"user", backend_to_json(cfg.backend_user)}}},
          {"models",
           {{"rec", {{"kind", to_string(cfg.run.rec_model_kind)},
                     {"artifact", cfg.rec_artifact},
                     {"hyper", hyper_to_json(cfg.rec_hyper)}}},
            {"reward", {{"kind", to_string(cfg.run.reward_model_kind)},
                        {"artifact", cfg.reward_artifact},
                        {"hyper", hyper_to_json(cfg.reward_hyper)}}},
            {"fallback", {{"kind", to_string(cfg.fallback_kind)},
                          {"artifact", cfg.fallback_artifact},
                          {"hyper", hyper_to_json(cfg.fallback_hyper)}}}}},
          {"output_dir", cfg.output_dir}};
}

std::string config_hash(const ConfigFile& cfg) { return fnv1a_hex(config_snapshot(cfg).dump()); }

const DatasetEntry& active_dataset(const ConfigFile& cfg) {
  auto it = cfg.datasets.find(cfg.run.dataset_name);
  if (it == cfg.datasets.end())
    raise(ErrorKind::Config, "dataset '" + cfg.run.dataset_name + "' is not in the registry");
  if (it->second.interactions.empty())
    raise(ErrorKind::Config, "dataset '" + it->first + "' has no interactions path");
  if (it->second.catalog.empty())
    raise(ErrorKind::Config, "dataset '" + it->first + "' has no catalog path");
  if (!std::filesystem::exists(it->second.interactions))
    raise(ErrorKind::Config, "missing dataset file: " + it->second.interactions);
  if (!std::filesystem::exists(it->second.catalog))
    raise(ErrorKind::Config, "missing dataset file: " + it->second.catalog);
  return it->second;
}

Experiment build_experiment(const ConfigFile& cfg, bool require_artifacts) {
  const DatasetEntry& dataset = active_dataset(cfg);
  Experiment exp;
  exp.cfg = cfg.run;
  exp.snapshot = config_snapshot(cfg);

  const InteractionLog log = load_interactions(dataset.interactions, dataset.catalog);
  exp.catalog = log.catalog;
  exp.split = chronological_split(log, cfg.run.split);

  // An empty artifact path always means "train in memory"; a configured path
  // must exist when artifacts are required.
  const auto obtain = [&](ScorerKind kind, const std::string& artifact_path,
                          const Hyperparams& hyper, std::uint64_t stream) {
    if (!artifact_path.empty()) {
      if (std::filesystem::exists(artifact_path)) return load_artifact(artifact_path);
      if (require_artifacts)
        raise(ErrorKind::Config,
              "missing trained artifact '" + artifact_path + "'; run `afl train` first");
    }
    return train(kind, exp.split.train, hyper, mix_seed(cfg.run.seed, stream)).first;
  };
  exp.rec_model = obtain(cfg.run.rec_model_kind, cfg.rec_artifact, cfg.rec_hyper, 1);
  exp.reward_model = obtain(cfg.run.reward_model_kind, cfg.reward_artifact, cfg.reward_hyper, 2);
  exp.fallback_model = obtain(cfg.fallback_kind, cfg.fallback_artifact, cfg.fallback_hyper, 3);
  exp.has_fallback = true;

  exp.rec_backend = make_backend(cfg.backend_rec);
  exp.user_backend = make_backend(cfg.backend_user);

  exp.templates = default_templates();
  if (!dataset.rec_template.empty()) load_rec_templates(exp.templates, dataset.rec_template);
  if (!dataset.user_template.empty()) load_user_templates(exp.templates, dataset.user_template);
  exp.nouns = dataset.nouns;
  return exp;
}

void use_replay_backends(Experiment& exp, const std::string& transcript_path) {
  BackendSpec spec;
  spec.kind = BackendKind::Replay;
  spec.replay_path = transcript_path;
  exp.rec_backend = make_backend(spec);
  exp.user_backend = make_backend(spec);
  const TranscriptFile file = read_transcript(transcript_path);
  if (!file.header.is_null()) exp.snapshot = file.header;
}

}  // namespace afl
