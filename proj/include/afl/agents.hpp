#pragma once

#include <optional>
#include <string>
#include <vector>

#include "afl/backend.hpp"
#include "afl/domain.hpp"

namespace afl {

// Slots use {name} placeholders. Block templates render to empty strings
// under the matching ablation.
struct PromptTemplates {
  std::string rec_system;
  std::string rec_prompt;
  std::string rec_memory_entry;
  std::string rec_suggestion_block;
  std::string user_system;
  std::string user_prompt;
  std::string user_memory_entry;
  std::string user_score_block;
  std::string user_score_tip;
};

// Built-in templates; the shipped defaults mirror the published wording with
// the dataset nouns injected.
PromptTemplates default_templates();

// Sectioned template file, one per side: `[system]`, `[prompt]`,
// `[memory_entry]` plus `[suggestion_block]` (rec) or `[score_block]` /
// `[score_tip]` (user). Missing sections keep their defaults.
void load_rec_templates(PromptTemplates& templates, const std::string& path);
void load_user_templates(PromptTemplates& templates, const std::string& path);

struct PromptBundle {
  std::string system;
  std::string body;
  int round = 0;
  MemoryOwner side = MemoryOwner::Recommendation;
};

PromptBundle render_rec_prompt(const PromptTemplates& templates, const DomainNouns& nouns,
                               const AgentMemory& memory, const UserSequence& history,
                               std::optional<ItemId> model_item,
                               const std::vector<ItemId>& candidate_items, const Catalog& catalog,
                               int history_cap);

PromptBundle render_user_prompt(const PromptTemplates& templates, const DomainNouns& nouns,
                                const AgentMemory& memory, const UserSequence& history,
                                const RecTurn& turn, std::optional<RewardScore> score,
                                const std::vector<ItemId>& candidate_items, const Catalog& catalog,
                                int history_cap);

struct ParsedRecReply {
  std::string reason;
  ItemId item = 0;
};

struct ParsedUserReply {
  std::string reason;
  bool decision = false;
};

// Takes the last "Reason:" block and the last "Item:" line; the title is
// resolved against the candidates by exact match, then case-insensitive
// trimmed match, then unique substring. Anything else is a parse error.
ParsedRecReply parse_rec_reply(const std::string& text, const std::vector<ItemId>& candidate_items,
                               const Catalog& catalog);

ParsedUserReply parse_user_reply(const std::string& text);

struct AgentConfig {
  Backend* backend = nullptr;
  PromptTemplates templates;
  DomainNouns nouns;
  std::string run_id;
  int parse_retries = 2;
  int history_cap = 50;
  bool use_rec_model = true;
  bool use_reward_model = true;
  double temperature = 0.0;
  int max_tokens = 512;
  double accept_threshold = 0.5;  // parse-exhausted fallback rule
};

struct RecCall {
  const AgentMemory* memory = nullptr;
  const UserSequence* history = nullptr;
  const std::vector<ItemId>* candidate_items = nullptr;
  const Catalog* catalog = nullptr;
  std::optional<ItemId> model_item;      // I_m; empty under the w/o-rec-model ablation
  std::vector<double> candidate_scores;  // view scores, aligned with candidate_items
  std::vector<ItemId> rejected;
  UserId user = 0;
  std::string phase = "loop";
  int round = 1;
};

struct RecResult {
  RecTurn turn;
  bool fallback = false;
  std::string prompt_hash;
};

// f_r: render, chat, parse; re-asks with a format reminder on malformed
// replies, then falls back to I_m (or the top view-scored candidate when the
// rec model is ablated).
RecResult recommend(const AgentConfig& agent, const RecCall& call, RecordLog* log);

struct JudgeCall {
  const AgentMemory* memory = nullptr;
  const UserSequence* history = nullptr;
  const std::vector<ItemId>* candidate_items = nullptr;
  const Catalog* catalog = nullptr;
  const RecTurn* turn = nullptr;
  std::optional<RewardScore> score;     // absent under the w/o-reward-model ablation
  std::optional<ItemId> ground_truth;   // oracle backend only; never reaches the wire
  UserId user = 0;
  std::string phase = "loop";
  int round = 1;
};

struct JudgeResult {
  Decision decision;
  bool fallback = false;
  std::string prompt_hash;
};

// f_u: render, chat, parse; on exhausted retries falls back to the threshold
// rule when a reward score exists, otherwise rejects.
JudgeResult judge(const AgentConfig& agent, const JudgeCall& call, RecordLog* log);

}  // namespace afl
