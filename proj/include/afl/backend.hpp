#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "afl/domain.hpp"
#include "afl/transcript.hpp"

namespace afl {

struct ScoredCandidate {
  ItemId id = 0;
  std::string title;
  double score = 0.0;
};

// What a deterministic backend is allowed to see. The harness fills the user
// side's ground_truth for the oracle backend only; the http backend never
// serializes any of this onto the wire.
struct AgentView {
  std::vector<ScoredCandidate> candidates;  // rec side, candidate order
  std::vector<ItemId> rejected;             // rec side
  std::optional<ItemId> recommended;        // user side: I_r
  std::string recommended_title;
  std::optional<double> reward_normalized;  // user side; absent under ablation
  std::optional<ItemId> ground_truth;       // user side, oracle backend only
};

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string text;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 512;
  RequestTag tag;
  AgentView view;
};

void validate(const ChatRequest& request);

struct BackendSpec {
  BackendKind kind = BackendKind::ScriptedRec;
  // http
  std::string base_url;
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  int retry_budget = 3;       // re-attempts after the first try
  int backoff_base_ms = 1000; // 1s/2s/4s with the default budget
  int inflight_limit = 4;
  int timeout_ms = 30000;
  // threshold-user
  double tau = 0.5;
  // replay
  std::string replay_path;
};

void validate(const BackendSpec& spec);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string chat(const ChatRequest& request) = 0;
  virtual BackendKind kind() const = 0;
};

std::unique_ptr<Backend> make_backend(const BackendSpec& spec);

// Calls the backend and appends a chat record to the log (when given).
std::string chat(Backend& backend, const ChatRequest& request, RecordLog* log);

// Pure response functions behind the deterministic backends. Emitted text
// follows the agents' required output formats exactly.
std::string scripted_rec_response(const AgentView& view);
std::string oracle_user_response(const AgentView& view);
std::string threshold_user_response(const AgentView& view, double tau);

}  // namespace afl
