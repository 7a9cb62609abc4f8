#include "afl/domain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "afl/error.hpp"

namespace afl {

void Catalog::add(Item item) {
  if (item.title.empty()) raise(ErrorKind::Precondition, "item title must be non-empty");
  items_[item.id] = std::move(item);
}

const Item& Catalog::at(ItemId id) const {
  auto it = items_.find(id);
  if (it == items_.end()) raise(ErrorKind::Reference, "unknown item id " + std::to_string(id));
  return it->second;
}

const std::string& Catalog::title_of(ItemId id) const { return at(id).title; }

std::vector<ItemId> Catalog::ids() const {
  std::vector<ItemId> out;
  out.reserve(items_.size());
  for (const auto& [id, item] : items_) out.push_back(id);
  return out;
}

void validate(const UserSequence& seq) {
  if (seq.items.empty()) raise(ErrorKind::Precondition, "user sequence must hold at least one item");
  if (seq.items.size() != seq.timestamps.size())
    raise(ErrorKind::Precondition, "items/timestamps length mismatch");
  for (std::size_t i = 0; i < seq.timestamps.size(); ++i) {
    if (seq.timestamps[i] < 0) raise(ErrorKind::Precondition, "negative timestamp");
    if (i > 0 && seq.timestamps[i] < seq.timestamps[i - 1])
      raise(ErrorKind::Precondition, "timestamps must be non-decreasing");
  }
}

const char* to_string(OrderingPolicy policy) {
  switch (policy) {
    case OrderingPolicy::Random: return "random";
    case OrderingPolicy::First: return "first";
    case OrderingPolicy::Last: return "last";
  }
  return "random";
}

OrderingPolicy ordering_policy_from_string(const std::string& name) {
  if (name == "random") return OrderingPolicy::Random;
  if (name == "first") return OrderingPolicy::First;
  if (name == "last") return OrderingPolicy::Last;
  raise(ErrorKind::Config, "unknown ordering policy '" + name + "'");
}

bool CandidateList::contains(ItemId id) const {
  return std::find(items.begin(), items.end(), id) != items.end();
}

void validate(const CandidateList& list, int expected_size) {
  if (static_cast<int>(list.items.size()) != expected_size)
    raise(ErrorKind::Precondition, "candidate list must hold exactly " +
                                       std::to_string(expected_size) + " items, got " +
                                       std::to_string(list.items.size()));
  std::unordered_set<ItemId> seen(list.items.begin(), list.items.end());
  if (seen.size() != list.items.size()) raise(ErrorKind::Precondition, "duplicate candidate items");
  if (list.positive_index < 0 || list.positive_index >= static_cast<int>(list.items.size()))
    raise(ErrorKind::Precondition, "positive index out of range");
  if (list.policy == OrderingPolicy::First && list.positive_index != 0)
    raise(ErrorKind::Precondition, "policy=first requires positive at index 0");
  if (list.policy == OrderingPolicy::Last &&
      list.positive_index != static_cast<int>(list.items.size()) - 1)
    raise(ErrorKind::Precondition, "policy=last requires positive at the final index");
}

void AgentMemory::append(MemoryEntry entry) {
  if (entry.round < 1) raise(ErrorKind::Precondition, "memory round must be >= 1");
  if (entry.rec_reason.empty() || entry.user_reason.empty())
    raise(ErrorKind::Precondition, "memory reasons must be non-empty");
  if (!entries.empty() && entry.round <= entries.back().round)
    raise(ErrorKind::Precondition, "memory rounds must be strictly increasing");
  entries.push_back(std::move(entry));
}

void validate(const LoopOutcome& outcome, int max_epoch) {
  if (outcome.iterations_used < 1 || outcome.iterations_used > max_epoch)
    raise(ErrorKind::Precondition, "iterations_used out of [1, max_epoch]");
  if (outcome.iterations_used != static_cast<int>(outcome.transcript.size()))
    raise(ErrorKind::Precondition, "iterations_used must equal transcript length");
  const TurnRecord& last = outcome.transcript.back();
  if (outcome.final_item != last.item)
    raise(ErrorKind::Precondition, "final item must be the last turn's recommendation");
  if (outcome.accepted != last.accepted)
    raise(ErrorKind::Precondition, "acceptance flag must match the last turn's decision");
}

DomainNouns nouns_for_dataset(const std::string& dataset_name) {
  DomainNouns nouns;
  if (dataset_name == "steam") {
    nouns = {"game", "games", "game player", "played", "play", "playing history", "playing records"};
  } else if (dataset_name == "movielens") {
    nouns = {"movie", "movies", "movie viewer", "watched", "watch", "viewing history", "viewing records"};
  }
  // lastfm and anything unnamed keep the music-artist defaults
  return nouns;
}

const char* to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::Popularity: return "popularity";
    case ScorerKind::Markov1: return "markov1";
    case ScorerKind::MfPairwise: return "mf-pairwise";
  }
  return "popularity";
}

ScorerKind scorer_kind_from_string(const std::string& name) {
  if (name == "popularity") return ScorerKind::Popularity;
  if (name == "markov1") return ScorerKind::Markov1;
  if (name == "mf-pairwise") return ScorerKind::MfPairwise;
  raise(ErrorKind::Config, "unknown scorer kind '" + name + "'");
}

const char* to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Http: return "http";
    case BackendKind::ScriptedRec: return "scripted-rec";
    case BackendKind::OracleUser: return "oracle-user";
    case BackendKind::ThresholdUser: return "threshold-user";
    case BackendKind::Replay: return "replay";
  }
  return "http";
}

BackendKind backend_kind_from_string(const std::string& name) {
  if (name == "http") return BackendKind::Http;
  if (name == "scripted-rec") return BackendKind::ScriptedRec;
  if (name == "oracle-user") return BackendKind::OracleUser;
  if (name == "threshold-user") return BackendKind::ThresholdUser;
  if (name == "replay") return BackendKind::Replay;
  raise(ErrorKind::Config, "unknown backend kind '" + name + "'");
}

void validate(const RunConfig& cfg) {
  const double sum = cfg.split.train + cfg.split.val + cfg.split.test;
  if (std::abs(sum - 1.0) > 1e-9) raise(ErrorKind::Config, "split ratios must sum to 1");
  if (cfg.split.train <= 0 || cfg.split.val <= 0 || cfg.split.test <= 0)
    raise(ErrorKind::Config, "split ratios must be positive");
  if (cfg.max_epoch < 1) raise(ErrorKind::Config, "max_epoch must be >= 1");
  if (cfg.candidate_size < 2) raise(ErrorKind::Config, "candidate_size must be >= 2");
  if (cfg.k_ratio != 1 && cfg.k_ratio != 3 && cfg.k_ratio != 9)
    raise(ErrorKind::Config, "k_ratio must be one of {1,3,9}");
  if (cfg.concurrency < 1) raise(ErrorKind::Config, "concurrency must be >= 1");
  if (cfg.retry_budget < 0) raise(ErrorKind::Config, "retry budget must be >= 0");
  if (cfg.parse_retries < 0) raise(ErrorKind::Config, "parse retries must be >= 0");
  if (cfg.history_cap < 1) raise(ErrorKind::Config, "history_cap must be >= 1");
  if (cfg.init_fraction <= 0.0 || cfg.init_fraction >= 1.0)
    raise(ErrorKind::Config, "init_fraction must lie in (0, 1)");
  if (cfg.reward_temperature <= 0.0) raise(ErrorKind::Config, "reward temperature must be > 0");
  if (cfg.test_subsample < 0) raise(ErrorKind::Config, "test_subsample must be >= 0");
}

// ---- JSON ----

namespace {

template <typename T>
nlohmann::json opt_to_json(const std::optional<T>& v) {
  if (v.has_value()) return nlohmann::json(*v);
  return nullptr;
}

template <typename T>
std::optional<T> opt_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const Item& v) { j = {{"id", v.id}, {"title", v.title}}; }
void from_json(const nlohmann::json& j, Item& v) {
  j.at("id").get_to(v.id);
  j.at("title").get_to(v.title);
}

void to_json(nlohmann::json& j, const InteractionEvent& v) {
  j = {{"user", v.user}, {"item", v.item}, {"timestamp", v.timestamp}};
}
void from_json(const nlohmann::json& j, InteractionEvent& v) {
  j.at("user").get_to(v.user);
  j.at("item").get_to(v.item);
  j.at("timestamp").get_to(v.timestamp);
}

void to_json(nlohmann::json& j, const UserSequence& v) {
  j = {{"user", v.user}, {"items", v.items}, {"timestamps", v.timestamps}};
}
void from_json(const nlohmann::json& j, UserSequence& v) {
  j.at("user").get_to(v.user);
  j.at("items").get_to(v.items);
  j.at("timestamps").get_to(v.timestamps);
}

void to_json(nlohmann::json& j, const CandidateList& v) {
  j = {{"items", v.items},
       {"positive_index", v.positive_index},
       {"policy", to_string(v.policy)}};
}
void from_json(const nlohmann::json& j, CandidateList& v) {
  j.at("items").get_to(v.items);
  j.at("positive_index").get_to(v.positive_index);
  v.policy = ordering_policy_from_string(j.at("policy").get<std::string>());
}

void to_json(nlohmann::json& j, const MemoryEntry& v) {
  j = {{"round", v.round},
       {"item", v.item},
       {"rec_reason", v.rec_reason},
       {"user_reason", v.user_reason}};
}
void from_json(const nlohmann::json& j, MemoryEntry& v) {
  j.at("round").get_to(v.round);
  j.at("item").get_to(v.item);
  j.at("rec_reason").get_to(v.rec_reason);
  j.at("user_reason").get_to(v.user_reason);
}

void to_json(nlohmann::json& j, const AgentMemory& v) {
  j = {{"owner", v.owner == MemoryOwner::Recommendation ? "recommendation" : "user"},
       {"entries", v.entries}};
}
void from_json(const nlohmann::json& j, AgentMemory& v) {
  const auto owner = j.at("owner").get<std::string>();
  v.owner = owner == "user" ? MemoryOwner::User : MemoryOwner::Recommendation;
  v.entries = j.at("entries").get<std::vector<MemoryEntry>>();
}

void to_json(nlohmann::json& j, const RewardScore& v) {
  j = {{"raw", v.raw}, {"normalized", v.normalized}};
}
void from_json(const nlohmann::json& j, RewardScore& v) {
  j.at("raw").get_to(v.raw);
  j.at("normalized").get_to(v.normalized);
}

void to_json(nlohmann::json& j, const RecTurn& v) {
  j = {{"item", v.item},
       {"reason", v.reason},
       {"model_suggestion", opt_to_json(v.model_suggestion)}};
}
void from_json(const nlohmann::json& j, RecTurn& v) {
  j.at("item").get_to(v.item);
  j.at("reason").get_to(v.reason);
  v.model_suggestion = opt_from_json<ItemId>(j.at("model_suggestion"));
}

void to_json(nlohmann::json& j, const Decision& v) {
  j = {{"accepted", v.accepted}, {"reason", v.reason}};
}
void from_json(const nlohmann::json& j, Decision& v) {
  j.at("accepted").get_to(v.accepted);
  j.at("reason").get_to(v.reason);
}

void to_json(nlohmann::json& j, const TurnRecord& v) {
  j = {{"round", v.round},
       {"i_m", opt_to_json(v.model_item)},
       {"i_r", v.item},
       {"r_r", v.rec_reason},
       {"s_raw", v.score ? nlohmann::json(v.score->raw) : nlohmann::json(nullptr)},
       {"s_norm", v.score ? nlohmann::json(v.score->normalized) : nlohmann::json(nullptr)},
       {"d_u", v.accepted},
       {"r_u", v.user_reason},
       {"rec_fallback", v.rec_fallback},
       {"user_fallback", v.user_fallback},
       {"rec_prompt_hash", v.rec_prompt_hash},
       {"user_prompt_hash", v.user_prompt_hash}};
}
void from_json(const nlohmann::json& j, TurnRecord& v) {
  j.at("round").get_to(v.round);
  v.model_item = opt_from_json<ItemId>(j.at("i_m"));
  j.at("i_r").get_to(v.item);
  j.at("r_r").get_to(v.rec_reason);
  if (j.at("s_raw").is_null()) {
    v.score.reset();
  } else {
    RewardScore s;
    j.at("s_raw").get_to(s.raw);
    j.at("s_norm").get_to(s.normalized);
    v.score = s;
  }
  j.at("d_u").get_to(v.accepted);
  j.at("r_u").get_to(v.user_reason);
  j.at("rec_fallback").get_to(v.rec_fallback);
  j.at("user_fallback").get_to(v.user_fallback);
  j.at("rec_prompt_hash").get_to(v.rec_prompt_hash);
  j.at("user_prompt_hash").get_to(v.user_prompt_hash);
}

void to_json(nlohmann::json& j, const LoopOutcome& v) {
  j = {{"final_item", v.final_item},
       {"accepted", v.accepted},
       {"iterations_used", v.iterations_used},
       {"transcript", v.transcript}};
}
void from_json(const nlohmann::json& j, LoopOutcome& v) {
  j.at("final_item").get_to(v.final_item);
  j.at("accepted").get_to(v.accepted);
  j.at("iterations_used").get_to(v.iterations_used);
  v.transcript = j.at("transcript").get<std::vector<TurnRecord>>();
}

void to_json(nlohmann::json& j, const RunConfig& v) {
  j = {{"dataset_name", v.dataset_name},
       {"interactions_path", v.interactions_path},
       {"catalog_path", v.catalog_path},
       {"split", {{"train", v.split.train}, {"val", v.split.val}, {"test", v.split.test}}},
       {"seed", v.seed},
       {"max_epoch", v.max_epoch},
       {"candidate_size", v.candidate_size},
       {"k_ratio", v.k_ratio},
       {"ordering_policy", to_string(v.policy)},
       {"rec_model_kind", to_string(v.rec_model_kind)},
       {"reward_model_kind", to_string(v.reward_model_kind)},
       {"backend_rec", to_string(v.backend_rec)},
       {"backend_user", to_string(v.backend_user)},
       {"use_rec_model", v.use_rec_model},
       {"use_reward_model", v.use_reward_model},
       {"concurrency", v.concurrency},
       {"retry_budget", v.retry_budget},
       {"refresh_model_suggestion", v.refresh_model_suggestion},
       {"parse_retries", v.parse_retries},
       {"history_cap", v.history_cap},
       {"init_fraction", v.init_fraction},
       {"reward_temperature", v.reward_temperature},
       {"accept_threshold", v.accept_threshold},
       {"sim_warmup_loop", v.sim_warmup_loop},
       {"sim_warmup_true_next", v.sim_warmup_true_next},
       {"test_subsample", v.test_subsample}};
}
void from_json(const nlohmann::json& j, RunConfig& v) {
  j.at("dataset_name").get_to(v.dataset_name);
  j.at("interactions_path").get_to(v.interactions_path);
  j.at("catalog_path").get_to(v.catalog_path);
  j.at("split").at("train").get_to(v.split.train);
  j.at("split").at("val").get_to(v.split.val);
  j.at("split").at("test").get_to(v.split.test);
  j.at("seed").get_to(v.seed);
  j.at("max_epoch").get_to(v.max_epoch);
  j.at("candidate_size").get_to(v.candidate_size);
  j.at("k_ratio").get_to(v.k_ratio);
  v.policy = ordering_policy_from_string(j.at("ordering_policy").get<std::string>());
  v.rec_model_kind = scorer_kind_from_string(j.at("rec_model_kind").get<std::string>());
  v.reward_model_kind = scorer_kind_from_string(j.at("reward_model_kind").get<std::string>());
  v.backend_rec = backend_kind_from_string(j.at("backend_rec").get<std::string>());
  v.backend_user = backend_kind_from_string(j.at("backend_user").get<std::string>());
  j.at("use_rec_model").get_to(v.use_rec_model);
  j.at("use_reward_model").get_to(v.use_reward_model);
  j.at("concurrency").get_to(v.concurrency);
  j.at("retry_budget").get_to(v.retry_budget);
  j.at("refresh_model_suggestion").get_to(v.refresh_model_suggestion);
  j.at("parse_retries").get_to(v.parse_retries);
  j.at("history_cap").get_to(v.history_cap);
  j.at("init_fraction").get_to(v.init_fraction);
  j.at("reward_temperature").get_to(v.reward_temperature);
  j.at("accept_threshold").get_to(v.accept_threshold);
  j.at("sim_warmup_loop").get_to(v.sim_warmup_loop);
  j.at("sim_warmup_true_next").get_to(v.sim_warmup_true_next);
  j.at("test_subsample").get_to(v.test_subsample);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return std::string(buf);
}

}  // namespace afl
