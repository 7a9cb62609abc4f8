#pragma once

#include <map>
#include <string>
#include <vector>

#include "afl/domain.hpp"

namespace afl {

// Identifies one chat call within a run; also the replay lookup key.
struct RequestTag {
  std::string run_id;
  UserId user = 0;
  std::string phase = "loop";  // loop | warmup | panel | rerank | rerank-rank
  int round = 0;
  std::string side;            // "rec" | "user"
  int attempt = 0;
};

std::string replay_key(const RequestTag& tag);

// Per-case record buffer. Cases run concurrently, each into its own log; the
// driver stitches logs into one JSONL file in deterministic case order.
struct RecordLog {
  std::vector<nlohmann::json> records;
  void add(nlohmann::json record) { records.push_back(std::move(record)); }
};

nlohmann::json header_record(const std::string& run_id, const nlohmann::json& config_snapshot);
nlohmann::json chat_record(const RequestTag& tag, const std::string& response);
nlohmann::json turn_record(const std::string& run_id, UserId user, const TurnRecord& turn);
nlohmann::json outcome_record(const std::string& run_id, UserId user, const LoopOutcome& outcome);

void write_transcript(const std::string& path, const nlohmann::json& header,
                      const std::vector<const RecordLog*>& logs);

// Parsed transcript: the header snapshot plus every recorded chat response,
// keyed for replay.
struct TranscriptFile {
  nlohmann::json header;  // null when the file has no header record
  std::map<std::string, std::string> chat_responses;
  std::vector<nlohmann::json> turns;
  std::vector<nlohmann::json> outcomes;
};

TranscriptFile read_transcript(const std::string& path);

}  // namespace afl
