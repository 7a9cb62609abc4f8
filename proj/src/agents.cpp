#include "afl/agents.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "afl/error.hpp"

namespace afl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string substitute(std::string text,
                       const std::vector<std::pair<std::string, std::string>>& slots) {
  for (const auto& [name, value] : slots) {
    const std::string token = "{" + name + "}";
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
      text.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return text;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

// Matches "Label: value" tolerating leading markdown markers and bold stars.
std::optional<std::string> match_label(const std::string& line, const std::string& label) {
  std::size_t i = 0;
  while (i < line.size() && (std::isspace(static_cast<unsigned char>(line[i])) || line[i] == '*' ||
                             line[i] == '#' || line[i] == '-' || line[i] == '>'))
    ++i;
  if (line.size() - i < label.size()) return std::nullopt;
  for (std::size_t k = 0; k < label.size(); ++k)
    if (std::tolower(static_cast<unsigned char>(line[i + k])) !=
        std::tolower(static_cast<unsigned char>(label[k])))
      return std::nullopt;
  i += label.size();
  while (i < line.size() && (line[i] == '*' || line[i] == ' ')) ++i;
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  ++i;
  std::string value = trim(line.substr(i));
  while (!value.empty() && value.back() == '*') value.pop_back();
  return trim(value);
}

std::string strip_quotes(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\'')))
    return trim(s.substr(1, s.size() - 2));
  return s;
}

// Reason block: from the last "Reason:" label down to the stop label line.
std::string extract_reason(const std::vector<std::string>& lines, std::size_t stop_index,
                           bool stop_valid) {
  std::optional<std::size_t> reason_index;
  for (std::size_t i = 0; i < lines.size(); ++i)
    if (match_label(lines[i], "Reason")) reason_index = i;
  if (!reason_index) return "";
  std::string reason = *match_label(lines[*reason_index], "Reason");
  for (std::size_t i = *reason_index + 1; i < lines.size(); ++i) {
    if (stop_valid && i == stop_index) break;
    if (match_label(lines[i], "Item") || match_label(lines[i], "Decision")) break;
    reason += "\n" + lines[i];
  }
  return trim(reason);
}

constexpr const char* kNoReason = "(no reason given)";

}  // namespace

// ---- templates ----

PromptTemplates default_templates() {
  PromptTemplates t;
  t.rec_system = "You are a {noun} recommendation system.";
  t.rec_prompt =
      "Refine the user's {history_noun} to predict the most likely {noun} he/she will "
      "{verb_future} next from the candidate list.\n"
      "\n"
      "The user has {verb_past} the following {noun_plural}: {history}.\n"
      "\n"
      "Here is the history of communication between you and the user: {memory}\n"
      "\n"
      "{suggestion_block}Here is the candidate list:\n"
      "{candidates}\n"
      "\n"
      "Some useful tips:\n"
      "\n"
      "1. You need to first give the reasons, and then provide the recommended {noun}.\n"
      "\n"
      "2. The recommended {noun} must be on the candidate list.\n"
      "\n"
      "You must follow this output format:\n"
      "\n"
      "Reason: <your reason example>\n"
      "\n"
      "Item: <item example>";
  t.rec_memory_entry =
      "In round {round}, the {noun} you recommended is {item}.\n"
      "\n"
      "The reason you gave for the recommendation is: {rec_reason}.\n"
      "\n"
      "The reason the user provided for not considering this to be the best recommendation is: "
      "{user_reason}.";
  t.rec_suggestion_block =
      "Another recommendation model has suggested a {noun} for your reference: "
      "{model_suggestion}.\n\n";
  t.user_system = "You are a {persona} judging recommendations against your own taste.";
  t.user_prompt =
      "As a {persona}, you've {verb_past} the following {noun_plural}: {history}.\n"
      "\n"
      "Now, a recommendation system has recommended a {noun} to you from a list of {noun} "
      "candidates, and has provided the reason for the recommendation.\n"
      "\n"
      "The recommended {noun} is: {item}.\n"
      "\n"
      "The reason for the recommendation is: {rec_reason}.\n"
      "\n"
      "Here is the candidate list:\n"
      "{candidates}\n"
      "\n"
      "Determine if this recommended {noun} is the most preferred option from the list of "
      "candidates based on your personal tastes and previous {records_noun}.\n"
      "\n"
      "Here is the history of communication between you and the recommendation system: {memory}\n"
      "\n"
      "{score_block}Some useful tips:\n"
      "\n"
      "1. You need to first give the reasons, and then decide whether or not the recommended "
      "{noun} is the most preferred one on the candidate list for you.\n"
      "\n"
      "2. Summarize your own interests based on your historical {records_noun} to make a "
      "judgment.{score_tip}\n"
      "\n"
      "You must follow this output format:\n"
      "\n"
      "Reason: <your reason example>\n"
      "\n"
      "Decision: <yes or no>";
  t.user_memory_entry =
      "In round {round}, the recommended {noun} is {item}.\n"
      "\n"
      "The reason given by the recommendation system is: {rec_reason}\n"
      "\n"
      "The reason you provided for not considering this the best recommendation is {user_reason}";
  t.user_score_block =
      "What's more, a reward model scores the {noun} based on its relevance to your historical "
      "{records_noun}: {score}\n\n";
  t.user_score_tip = "\n\n3. You can refer to the score given by the reward model.";
  return t;
}

namespace {

std::map<std::string, std::string> read_sections(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot open template file " + path);
  std::map<std::string, std::string> sections;
  std::string line;
  std::string current;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      sections[current];
      continue;
    }
    if (current.empty()) {
      if (trim(line).empty()) continue;
      raise(ErrorKind::Config, path + " line " + std::to_string(line_no) +
                                   ": content outside a [section]");
    }
    std::string& body = sections[current];
    if (!body.empty()) body += "\n";
    body += line;
  }
  for (auto& [name, body] : sections) {
    while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
  }
  return sections;
}

}  // namespace

void load_rec_templates(PromptTemplates& templates, const std::string& path) {
  for (const auto& [name, body] : read_sections(path)) {
    if (name == "system") templates.rec_system = body;
    else if (name == "prompt") templates.rec_prompt = body;
    else if (name == "memory_entry") templates.rec_memory_entry = body;
    else if (name == "suggestion_block") templates.rec_suggestion_block = body;
    else raise(ErrorKind::Config, path + ": unknown section [" + name + "]");
  }
}

void load_user_templates(PromptTemplates& templates, const std::string& path) {
  for (const auto& [name, body] : read_sections(path)) {
    if (name == "system") templates.user_system = body;
    else if (name == "prompt") templates.user_prompt = body;
    else if (name == "memory_entry") templates.user_memory_entry = body;
    else if (name == "score_block") templates.user_score_block = body;
    else if (name == "score_tip") templates.user_score_tip = body;
    else raise(ErrorKind::Config, path + ": unknown section [" + name + "]");
  }
}

// ---- rendering ----

namespace {

const std::string& title_or_render_error(const Catalog& catalog, ItemId id) {
  if (!catalog.contains(id))
    raise(ErrorKind::Render, "item " + std::to_string(id) + " has no catalog title");
  return catalog.title_of(id);
}

std::string render_history(const UserSequence& history, const Catalog& catalog, int cap) {
  const std::size_t n = history.items.size();
  const std::size_t start = n > static_cast<std::size_t>(cap) ? n - static_cast<std::size_t>(cap) : 0;
  std::string out;
  for (std::size_t i = start; i < n; ++i) {
    if (!out.empty()) out += ", ";
    out += title_or_render_error(catalog, history.items[i]);
  }
  return out;
}

std::string render_candidates(const std::vector<ItemId>& candidate_items, const Catalog& catalog) {
  std::string out;
  for (ItemId id : candidate_items) {
    if (!out.empty()) out += "\n";
    out += "- " + title_or_render_error(catalog, id);
  }
  return out;
}

std::string render_memory(const std::string& entry_template, const DomainNouns& nouns,
                          const AgentMemory& memory, const Catalog& catalog) {
  if (memory.entries.empty()) return "(no prior rounds)";
  std::string out;
  for (const auto& entry : memory.entries) {
    if (!out.empty()) out += "\n\n";
    out += substitute(entry_template, {{"round", std::to_string(entry.round)},
                                       {"item", title_or_render_error(catalog, entry.item)},
                                       {"rec_reason", entry.rec_reason},
                                       {"user_reason", entry.user_reason},
                                       {"noun", nouns.item_noun}});
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> noun_slots(const DomainNouns& nouns) {
  return {{"noun", nouns.item_noun},
          {"noun_plural", nouns.item_noun_plural},
          {"persona", nouns.persona},
          {"verb_past", nouns.verb_past},
          {"verb_future", nouns.verb_future},
          {"history_noun", nouns.history_noun},
          {"records_noun", nouns.records_noun}};
}

}  // namespace

PromptBundle render_rec_prompt(const PromptTemplates& templates, const DomainNouns& nouns,
                               const AgentMemory& memory, const UserSequence& history,
                               std::optional<ItemId> model_item,
                               const std::vector<ItemId>& candidate_items, const Catalog& catalog,
                               int history_cap) {
  if (memory.owner != MemoryOwner::Recommendation)
    raise(ErrorKind::Precondition, "rec prompt needs the recommendation-side memory");
  validate(history);

  std::string suggestion_block;
  if (model_item) {
    suggestion_block = substitute(
        templates.rec_suggestion_block,
        {{"model_suggestion", title_or_render_error(catalog, *model_item)},
         {"noun", nouns.item_noun}});
  }

  auto slots = noun_slots(nouns);
  slots.push_back({"history", render_history(history, catalog, history_cap)});
  slots.push_back({"memory", render_memory(templates.rec_memory_entry, nouns, memory, catalog)});
  slots.push_back({"suggestion_block", suggestion_block});
  slots.push_back({"candidates", render_candidates(candidate_items, catalog)});

  PromptBundle bundle;
  bundle.system = substitute(templates.rec_system, noun_slots(nouns));
  bundle.body = substitute(templates.rec_prompt, slots);
  bundle.round = static_cast<int>(memory.entries.size()) + 1;
  bundle.side = MemoryOwner::Recommendation;
  return bundle;
}

PromptBundle render_user_prompt(const PromptTemplates& templates, const DomainNouns& nouns,
                                const AgentMemory& memory, const UserSequence& history,
                                const RecTurn& turn, std::optional<RewardScore> score,
                                const std::vector<ItemId>& candidate_items, const Catalog& catalog,
                                int history_cap) {
  if (memory.owner != MemoryOwner::User)
    raise(ErrorKind::Precondition, "user prompt needs the user-side memory");
  if (history.items.empty())
    raise(ErrorKind::Precondition, "user prompt needs a history of length >= 1");
  validate(history);

  std::string score_block;
  std::string score_tip;
  if (score) {
    auto slots = noun_slots(nouns);
    slots.push_back({"score", format_fixed(score->normalized, 4)});
    score_block = substitute(templates.user_score_block, slots);
    score_tip = substitute(templates.user_score_tip, noun_slots(nouns));
  }

  auto slots = noun_slots(nouns);
  slots.push_back({"history", render_history(history, catalog, history_cap)});
  slots.push_back({"item", title_or_render_error(catalog, turn.item)});
  slots.push_back({"rec_reason", turn.reason});
  slots.push_back({"memory", render_memory(templates.user_memory_entry, nouns, memory, catalog)});
  slots.push_back({"score_block", score_block});
  slots.push_back({"score_tip", score_tip});
  slots.push_back({"candidates", render_candidates(candidate_items, catalog)});

  PromptBundle bundle;
  bundle.system = substitute(templates.user_system, noun_slots(nouns));
  bundle.body = substitute(templates.user_prompt, slots);
  bundle.round = static_cast<int>(memory.entries.size()) + 1;
  bundle.side = MemoryOwner::User;
  return bundle;
}

// ---- parsing ----

ParsedRecReply parse_rec_reply(const std::string& text, const std::vector<ItemId>& candidate_items,
                               const Catalog& catalog) {
  const auto lines = split_lines(text);
  std::optional<std::size_t> item_index;
  for (std::size_t i = 0; i < lines.size(); ++i)
    if (match_label(lines[i], "Item")) item_index = i;
  if (!item_index) raise(ErrorKind::Parse, "missing 'Item:' line");

  const std::string raw = strip_quotes(*match_label(lines[*item_index], "Item"));
  if (raw.empty()) raise(ErrorKind::Parse, "empty 'Item:' line");

  const auto resolve = [&](auto&& predicate) -> std::optional<ItemId> {
    std::vector<ItemId> matches;
    for (ItemId id : candidate_items)
      if (predicate(catalog.title_of(id))) matches.push_back(id);
    if (matches.size() > 1)
      raise(ErrorKind::Parse, "title '" + raw + "' matches " + std::to_string(matches.size()) +
                                  " candidates");
    if (matches.size() == 1) return matches[0];
    return std::nullopt;
  };

  const std::string raw_ci = lower(trim(raw));
  std::optional<ItemId> item =
      resolve([&](const std::string& title) { return title == raw; });
  if (!item)
    item = resolve([&](const std::string& title) { return lower(trim(title)) == raw_ci; });
  if (!item)
    item = resolve([&](const std::string& title) {
      const std::string t = lower(trim(title));
      return t.find(raw_ci) != std::string::npos || raw_ci.find(t) != std::string::npos;
    });
  if (!item) raise(ErrorKind::Parse, "no candidate matches title '" + raw + "'");

  ParsedRecReply reply;
  reply.item = *item;
  reply.reason = extract_reason(lines, *item_index, true);
  if (reply.reason.empty()) reply.reason = kNoReason;
  return reply;
}

ParsedUserReply parse_user_reply(const std::string& text) {
  const auto lines = split_lines(text);
  std::optional<std::size_t> decision_index;
  for (std::size_t i = 0; i < lines.size(); ++i)
    if (match_label(lines[i], "Decision")) decision_index = i;
  if (!decision_index) raise(ErrorKind::Parse, "missing 'Decision:' line");

  std::string value = *match_label(lines[*decision_index], "Decision");
  const std::size_t space = value.find_first_of(" \t");
  std::string token = lower(space == std::string::npos ? value : value.substr(0, space));
  while (!token.empty() && (token.back() == '.' || token.back() == '!' || token.back() == ',' ||
                            token.back() == '"' || token.back() == '\''))
    token.pop_back();

  ParsedUserReply reply;
  if (token == "yes") reply.decision = true;
  else if (token == "no") reply.decision = false;
  else raise(ErrorKind::Parse, "decision token '" + value + "' is neither yes nor no");

  reply.reason = extract_reason(lines, *decision_index, true);
  if (reply.reason.empty()) reply.reason = kNoReason;
  return reply;
}

// ---- agent operations ----

namespace {

constexpr const char* kRecReminder =
    "Your previous reply did not follow the required format. Answer again with exactly two "
    "lines:\nReason: <your reason>\nItem: <one title copied exactly from the candidate list>";
constexpr const char* kUserReminder =
    "Your previous reply did not follow the required format. Answer again with exactly two "
    "lines:\nReason: <your reason>\nDecision: <yes or no>";

std::string prompt_hash(const PromptBundle& bundle) {
  return fnv1a_hex(bundle.system + "\n" + bundle.body);
}

}  // namespace

RecResult recommend(const AgentConfig& agent, const RecCall& call, RecordLog* log) {
  if (!agent.backend) raise(ErrorKind::Precondition, "rec agent needs a backend");
  if (!call.memory || !call.history || !call.candidate_items || !call.catalog)
    raise(ErrorKind::Precondition, "incomplete rec call state");
  if (call.candidate_scores.size() != call.candidate_items->size())
    raise(ErrorKind::Precondition, "candidate scores must align with the candidate list");

  const PromptBundle bundle =
      render_rec_prompt(agent.templates, agent.nouns, *call.memory, *call.history, call.model_item,
                        *call.candidate_items, *call.catalog, agent.history_cap);

  ChatRequest request;
  request.messages = {{"system", bundle.system}, {"user", bundle.body}};
  request.temperature = agent.temperature;
  request.max_tokens = agent.max_tokens;
  request.tag = {agent.run_id, call.user, call.phase, call.round, "rec", 0};
  for (std::size_t i = 0; i < call.candidate_items->size(); ++i) {
    const ItemId id = (*call.candidate_items)[i];
    request.view.candidates.push_back(
        {id, call.catalog->title_of(id), call.candidate_scores[i]});
  }
  request.view.rejected = call.rejected;

  RecResult result;
  result.prompt_hash = prompt_hash(bundle);

  for (int attempt = 0; attempt <= agent.parse_retries; ++attempt) {
    request.tag.attempt = attempt;
    const std::string text = chat(*agent.backend, request, log);
    try {
      const ParsedRecReply parsed = parse_rec_reply(text, *call.candidate_items, *call.catalog);
      result.turn = {parsed.item, parsed.reason, call.model_item};
      return result;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Parse) throw;
      request.messages.push_back({"assistant", text});
      request.messages.push_back({"user", kRecReminder});
    }
  }

  // parse retries exhausted
  result.fallback = true;
  ItemId item = 0;
  if (call.model_item) {
    item = *call.model_item;
  } else {
    std::size_t best = 0;
    for (std::size_t i = 1; i < call.candidate_items->size(); ++i) {
      const double s = call.candidate_scores[i];
      const double b = call.candidate_scores[best];
      if (s > b || (s == b && (*call.candidate_items)[i] < (*call.candidate_items)[best])) best = i;
    }
    item = (*call.candidate_items)[best];
  }
  result.turn = {item, "Fallback after unparseable replies: defaulting to the strongest available suggestion.",
                 call.model_item};
  return result;
}

JudgeResult judge(const AgentConfig& agent, const JudgeCall& call, RecordLog* log) {
  if (!agent.backend) raise(ErrorKind::Precondition, "user agent needs a backend");
  if (!call.memory || !call.history || !call.candidate_items || !call.catalog || !call.turn)
    raise(ErrorKind::Precondition, "incomplete judge call state");

  const PromptBundle bundle =
      render_user_prompt(agent.templates, agent.nouns, *call.memory, *call.history, *call.turn,
                         call.score, *call.candidate_items, *call.catalog, agent.history_cap);

  ChatRequest request;
  request.messages = {{"system", bundle.system}, {"user", bundle.body}};
  request.temperature = agent.temperature;
  request.max_tokens = agent.max_tokens;
  request.tag = {agent.run_id, call.user, call.phase, call.round, "user", 0};
  request.view.recommended = call.turn->item;
  request.view.recommended_title = call.catalog->title_of(call.turn->item);
  if (call.score) request.view.reward_normalized = call.score->normalized;
  request.view.ground_truth = call.ground_truth;

  JudgeResult result;
  result.prompt_hash = prompt_hash(bundle);

  for (int attempt = 0; attempt <= agent.parse_retries; ++attempt) {
    request.tag.attempt = attempt;
    const std::string text = chat(*agent.backend, request, log);
    try {
      const ParsedUserReply parsed = parse_user_reply(text);
      result.decision = {parsed.decision, parsed.reason};
      return result;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Parse) throw;
      request.messages.push_back({"assistant", text});
      request.messages.push_back({"user", kUserReminder});
    }
  }

  result.fallback = true;
  if (call.score) {
    const bool accepted = call.score->normalized >= agent.accept_threshold;
    result.decision = {accepted, "Fallback after unparseable replies: reward score " +
                                     format_fixed(call.score->normalized, 4) +
                                     (accepted ? " reaches" : " falls below") +
                                     " the acceptance threshold."};
  } else {
    result.decision = {false, "Fallback after unparseable replies: rejecting without a reward score."};
  }
  return result;
}

}  // namespace afl
