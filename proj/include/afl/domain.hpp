#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace afl {

using ItemId = std::int64_t;
using UserId = std::int64_t;
using Timestamp = std::int64_t;

struct Item {
  ItemId id = 0;
  std::string title;
};

// Item identity is the integer id; titles exist only for prompt text.
class Catalog {
 public:
  void add(Item item);
  bool contains(ItemId id) const { return items_.count(id) > 0; }
  const Item& at(ItemId id) const;            // throws Reference on unknown id
  const std::string& title_of(ItemId id) const;
  std::size_t size() const { return items_.size(); }
  std::vector<ItemId> ids() const;            // ascending
  const std::map<ItemId, Item>& items() const { return items_; }

 private:
  std::map<ItemId, Item> items_;
};

struct InteractionEvent {
  UserId user = 0;
  ItemId item = 0;
  Timestamp timestamp = 0;
};

// One user's time-ordered interaction history [I_1 .. I_n].
struct UserSequence {
  UserId user = 0;
  std::vector<ItemId> items;
  std::vector<Timestamp> timestamps;

  Timestamp last_timestamp() const { return timestamps.back(); }
};

void validate(const UserSequence& seq);

enum class OrderingPolicy { Random, First, Last };

const char* to_string(OrderingPolicy policy);
OrderingPolicy ordering_policy_from_string(const std::string& name);

// Evaluation slate with one hidden positive. positive_index is harness-only
// information and never rendered into prompts.
struct CandidateList {
  std::vector<ItemId> items;
  int positive_index = -1;
  OrderingPolicy policy = OrderingPolicy::Random;

  ItemId positive() const { return items.at(static_cast<std::size_t>(positive_index)); }
  bool contains(ItemId id) const;
};

void validate(const CandidateList& list, int expected_size = 20);

enum class MemoryOwner { Recommendation, User };

struct MemoryEntry {
  int round = 0;               // iteration E >= 1
  ItemId item = 0;             // I_r
  std::string rec_reason;      // R_r
  std::string user_reason;     // R_u
};

// Append-only per-agent record of rejected rounds {I_r, R_r, R_u}.
struct AgentMemory {
  MemoryOwner owner = MemoryOwner::Recommendation;
  std::vector<MemoryEntry> entries;

  void append(MemoryEntry entry);  // enforces round ordering and non-empty text
  bool empty() const { return entries.empty(); }
};

struct RewardScore {
  double raw = 0.0;
  double normalized = 0.5;  // sigmoid(raw / tau), in [0, 1]
};

struct RecTurn {
  ItemId item = 0;                        // I_r
  std::string reason;                     // R_r
  std::optional<ItemId> model_suggestion; // I_m; absent under the w/o-rec-model ablation
};

struct Decision {
  bool accepted = false;  // D_u
  std::string reason;     // R_u
};

struct TurnRecord {
  int round = 0;
  std::optional<ItemId> model_item;   // I_m
  ItemId item = 0;                    // I_r
  std::string rec_reason;             // R_r
  std::optional<RewardScore> score;   // S; absent under the w/o-reward-model ablation
  bool accepted = false;              // D_u
  std::string user_reason;            // R_u
  bool rec_fallback = false;
  bool user_fallback = false;
  std::string rec_prompt_hash;
  std::string user_prompt_hash;
};

struct LoopOutcome {
  ItemId final_item = 0;
  bool accepted = false;
  int iterations_used = 0;
  std::vector<TurnRecord> transcript;
};

void validate(const LoopOutcome& outcome, int max_epoch);

// Per-dataset nouns injected into the prompt templates.
struct DomainNouns {
  std::string item_noun = "music artist";
  std::string item_noun_plural = "music artists";
  std::string persona = "music listener";
  std::string verb_past = "listened to";
  std::string verb_future = "listen to";
  std::string history_noun = "listening history";
  std::string records_noun = "listening records";
};

DomainNouns nouns_for_dataset(const std::string& dataset_name);

enum class ScorerKind { Popularity, Markov1, MfPairwise };

const char* to_string(ScorerKind kind);
ScorerKind scorer_kind_from_string(const std::string& name);

enum class BackendKind { Http, ScriptedRec, OracleUser, ThresholdUser, Replay };

const char* to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& name);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct RunConfig {
  std::string dataset_name = "synthetic";
  std::string interactions_path;
  std::string catalog_path;
  SplitRatios split;
  std::uint64_t seed = 42;
  int max_epoch = 4;
  int candidate_size = 20;
  int k_ratio = 1;  // positives:negatives = 1:k, k in {1,3,9}
  OrderingPolicy policy = OrderingPolicy::Random;
  ScorerKind rec_model_kind = ScorerKind::MfPairwise;
  ScorerKind reward_model_kind = ScorerKind::MfPairwise;
  BackendKind backend_rec = BackendKind::ScriptedRec;
  BackendKind backend_user = BackendKind::OracleUser;
  bool use_rec_model = true;
  bool use_reward_model = true;
  int concurrency = 4;
  int retry_budget = 3;        // http re-attempts after the first try
  bool refresh_model_suggestion = false;
  int parse_retries = 2;       // re-asks after a malformed agent reply
  int history_cap = 50;        // most recent items rendered into prompts
  double init_fraction = 0.8;  // sim-panel initialization boundary
  double reward_temperature = 1.0;
  double accept_threshold = 0.5;
  bool sim_warmup_loop = true;
  bool sim_warmup_true_next = true;
  int test_subsample = 0;  // 0 = use the full test split
};

void validate(const RunConfig& cfg);

// JSON round-trips; serialize-then-deserialize is the identity for all of these.
void to_json(nlohmann::json& j, const Item& v);
void from_json(const nlohmann::json& j, Item& v);
void to_json(nlohmann::json& j, const InteractionEvent& v);
void from_json(const nlohmann::json& j, InteractionEvent& v);
void to_json(nlohmann::json& j, const UserSequence& v);
void from_json(const nlohmann::json& j, UserSequence& v);
void to_json(nlohmann::json& j, const CandidateList& v);
void from_json(const nlohmann::json& j, CandidateList& v);
void to_json(nlohmann::json& j, const MemoryEntry& v);
void from_json(const nlohmann::json& j, MemoryEntry& v);
void to_json(nlohmann::json& j, const AgentMemory& v);
void from_json(const nlohmann::json& j, AgentMemory& v);
void to_json(nlohmann::json& j, const RewardScore& v);
void from_json(const nlohmann::json& j, RewardScore& v);
void to_json(nlohmann::json& j, const RecTurn& v);
void from_json(const nlohmann::json& j, RecTurn& v);
void to_json(nlohmann::json& j, const Decision& v);
void from_json(const nlohmann::json& j, Decision& v);
void to_json(nlohmann::json& j, const TurnRecord& v);
void from_json(const nlohmann::json& j, TurnRecord& v);
void to_json(nlohmann::json& j, const LoopOutcome& v);
void from_json(const nlohmann::json& j, LoopOutcome& v);
void to_json(nlohmann::json& j, const RunConfig& v);
void from_json(const nlohmann::json& j, RunConfig& v);

// FNV-1a over a string, hex-encoded; used for prompt hashes and config ids.
std::string fnv1a_hex(const std::string& text);

// Fixed-point decimal rendering used for reward scores in prompts ("0.5000").
std::string format_fixed(double value, int decimals);

}  // namespace afl
