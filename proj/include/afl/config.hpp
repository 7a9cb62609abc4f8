#pragma once

#include <map>
#include <string>

#include "afl/evalbench.hpp"

namespace afl {

struct DatasetEntry {
  std::string name;
  std::string interactions;
  std::string catalog;
  DomainNouns nouns;
  std::string rec_template;   // optional sectioned template file
  std::string user_template;
};

struct ConfigFile {
  RunConfig run;
  std::map<std::string, DatasetEntry> datasets;
  BackendSpec backend_rec;
  BackendSpec backend_user;
  Hyperparams rec_hyper;
  Hyperparams reward_hyper;
  Hyperparams fallback_hyper;
  ScorerKind fallback_kind = ScorerKind::Popularity;
  std::string rec_artifact;
  std::string reward_artifact;
  std::string fallback_artifact;
  std::string output_dir = "runs";
};

ConfigFile default_config();

// Strict parse: unknown keys and type mismatches are config errors naming the
// offending path (e.g. "$.backends.rec.foo").
ConfigFile parse_config_json(const nlohmann::json& j);
ConfigFile load_config(const std::string& path);

// Stable JSON snapshot embedded in reports and transcript headers.
nlohmann::json config_snapshot(const ConfigFile& cfg);
std::string config_hash(const ConfigFile& cfg);

const DatasetEntry& active_dataset(const ConfigFile& cfg);

// Loads the dataset and artifacts and wires backends. When require_artifacts
// is false, scorers are trained in memory instead of read from disk.
Experiment build_experiment(const ConfigFile& cfg, bool require_artifacts);

// Swaps both backends for replay over the given transcript; the transcript
// header's config snapshot, when present, replaces the experiment snapshot so
// replayed reports reproduce the original bytes.
void use_replay_backends(Experiment& exp, const std::string& transcript_path);

}  // namespace afl
