#include "afl/transcript.hpp"

#include <fstream>

#include "afl/error.hpp"

namespace afl {

std::string replay_key(const RequestTag& tag) {
  return "u" + std::to_string(tag.user) + ":" + tag.phase + ":" + std::to_string(tag.round) + ":" +
         tag.side + ":" + std::to_string(tag.attempt);
}

nlohmann::json header_record(const std::string& run_id, const nlohmann::json& config_snapshot) {
  return {{"type", "header"}, {"run_id", run_id}, {"config", config_snapshot}};
}

nlohmann::json chat_record(const RequestTag& tag, const std::string& response) {
  return {{"type", "chat"},   {"run_id", tag.run_id}, {"user", tag.user},
          {"phase", tag.phase}, {"round", tag.round},   {"side", tag.side},
          {"attempt", tag.attempt}, {"response", response}};
}

nlohmann::json turn_record(const std::string& run_id, UserId user, const TurnRecord& turn) {
  nlohmann::json j = turn;
  j["type"] = "turn";
  j["run_id"] = run_id;
  j["user"] = user;
  return j;
}

nlohmann::json outcome_record(const std::string& run_id, UserId user, const LoopOutcome& outcome) {
  return {{"type", "outcome"},
          {"run_id", run_id},
          {"user", user},
          {"final_item", outcome.final_item},
          {"accepted", outcome.accepted},
          {"iterations_used", outcome.iterations_used}};
}

void write_transcript(const std::string& path, const nlohmann::json& header,
                      const std::vector<const RecordLog*>& logs) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write transcript " + path);
  if (!header.is_null()) out << header.dump() << '\n';
  for (const RecordLog* log : logs)
    for (const auto& record : log->records) out << record.dump() << '\n';
}

TranscriptFile read_transcript(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot open transcript " + path);
  TranscriptFile file;
  file.header = nullptr;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      raise(ErrorKind::Parse, "transcript line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = record.value("type", "");
    if (type == "header") {
      file.header = record.value("config", nlohmann::json(nullptr));
    } else if (type == "chat") {
      RequestTag tag;
      tag.user = record.at("user").get<UserId>();
      tag.phase = record.at("phase").get<std::string>();
      tag.round = record.at("round").get<int>();
      tag.side = record.at("side").get<std::string>();
      tag.attempt = record.at("attempt").get<int>();
      file.chat_responses[replay_key(tag)] = record.at("response").get<std::string>();
    } else if (type == "turn") {
      file.turns.push_back(std::move(record));
    } else if (type == "outcome") {
      file.outcomes.push_back(std::move(record));
    }
  }
  return file;
}

}  // namespace afl
