#include "afl/backend.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <thread>
#include <unordered_set>

#include "httplib.h"

#include "afl/error.hpp"

namespace afl {

void validate(const ChatRequest& request) {
  if (request.messages.empty()) raise(ErrorKind::Precondition, "chat request needs >= 1 message");
  if (request.temperature < 0.0) raise(ErrorKind::Precondition, "temperature must be >= 0");
}

void validate(const BackendSpec& spec) {
  switch (spec.kind) {
    case BackendKind::Http:
      if (spec.base_url.empty()) raise(ErrorKind::Config, "http backend needs base_url");
      if (spec.model.empty()) raise(ErrorKind::Config, "http backend needs a model name");
      if (spec.retry_budget < 0) raise(ErrorKind::Config, "retry budget must be >= 0");
      if (spec.inflight_limit < 1) raise(ErrorKind::Config, "inflight limit must be >= 1");
      break;
    case BackendKind::Replay:
      if (spec.replay_path.empty()) raise(ErrorKind::Config, "replay backend needs replay_path");
      break;
    case BackendKind::ThresholdUser:
      if (spec.tau < 0.0 || spec.tau > 1.0) raise(ErrorKind::Config, "tau must lie in [0, 1]");
      break;
    default:
      break;
  }
}

// ---- deterministic response functions ----

namespace {

const ScoredCandidate* best_candidate(const std::vector<ScoredCandidate>& candidates,
                                      const std::unordered_set<ItemId>* excluded) {
  const ScoredCandidate* best = nullptr;
  for (const auto& c : candidates) {
    if (excluded && excluded->count(c.id)) continue;
    if (!best || c.score > best->score || (c.score == best->score && c.id < best->id)) best = &c;
  }
  return best;
}

}  // namespace

std::string scripted_rec_response(const AgentView& view) {
  if (view.candidates.empty())
    raise(ErrorKind::Precondition, "scripted rec backend needs candidate scores");
  const std::unordered_set<ItemId> rejected(view.rejected.begin(), view.rejected.end());
  const ScoredCandidate* pick = best_candidate(view.candidates, &rejected);
  if (pick == nullptr) {
    // every candidate was rejected: repeat the strongest one
    pick = best_candidate(view.candidates, nullptr);
  }
  return "Reason: Among the remaining candidates this one carries the highest model score, " +
         format_fixed(pick->score, 4) + ".\nItem: " + pick->title;
}

std::string oracle_user_response(const AgentView& view) {
  if (!view.recommended || !view.ground_truth)
    raise(ErrorKind::Precondition, "oracle user backend needs recommended item and ground truth");
  if (*view.recommended == *view.ground_truth)
    return "Reason: This matches what I would pick next.\nDecision: yes";
  return "Reason: This is not what I would pick next.\nDecision: no";
}

std::string threshold_user_response(const AgentView& view, double tau) {
  if (!view.reward_normalized)
    raise(ErrorKind::Precondition, "threshold user backend needs a reward score");
  const double s = *view.reward_normalized;
  if (s >= tau)
    return "Reason: The reward score " + format_fixed(s, 4) + " reaches the threshold " +
           format_fixed(tau, 4) + ".\nDecision: yes";
  return "Reason: The reward score " + format_fixed(s, 4) + " falls below the threshold " +
         format_fixed(tau, 4) + ".\nDecision: no";
}

// ---- backends ----

namespace {

class ScriptedRecBackend final : public Backend {
 public:
  std::string chat(const ChatRequest& request) override {
    return scripted_rec_response(request.view);
  }
  BackendKind kind() const override { return BackendKind::ScriptedRec; }
};

class OracleUserBackend final : public Backend {
 public:
  std::string chat(const ChatRequest& request) override {
    return oracle_user_response(request.view);
  }
  BackendKind kind() const override { return BackendKind::OracleUser; }
};

class ThresholdUserBackend final : public Backend {
 public:
  explicit ThresholdUserBackend(double tau) : tau_(tau) {}
  std::string chat(const ChatRequest& request) override {
    return threshold_user_response(request.view, tau_);
  }
  BackendKind kind() const override { return BackendKind::ThresholdUser; }

 private:
  double tau_;
};

class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::string& path)
      : path_(path), file_(read_transcript(path)) {}

  std::string chat(const ChatRequest& request) override {
    const std::string key = replay_key(request.tag);
    auto it = file_.chat_responses.find(key);
    if (it == file_.chat_responses.end())
      raise(ErrorKind::Replay, "no recorded response for " + key + " in " + path_);
    return it->second;
  }
  BackendKind kind() const override { return BackendKind::Replay; }

 private:
  std::string path_;
  TranscriptFile file_;
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendSpec spec)
      : spec_(std::move(spec)),
        inflight_(spec_.inflight_limit) {
    if (const char* key = std::getenv(spec_.api_key_env.c_str())) api_key_ = key;
  }

  std::string chat(const ChatRequest& request) override {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.text}});
    const std::string body = nlohmann::json{{"model", spec_.model},
                                            {"messages", std::move(messages)},
                                            {"temperature", request.temperature},
                                            {"max_tokens", request.max_tokens}}
                                 .dump();

    int last_status = 0;
    std::string last_detail;
    for (int attempt = 0; attempt <= spec_.retry_budget; ++attempt) {
      if (attempt > 0) {
        const auto delay = std::chrono::milliseconds(
            static_cast<std::int64_t>(spec_.backoff_base_ms) << (attempt - 1));
        std::this_thread::sleep_for(delay);
      }
      auto outcome = post_once(body);
      last_status = outcome.status;
      last_detail = outcome.detail;
      if (outcome.ok) return outcome.content;
      if (!outcome.retryable)
        raise(ErrorKind::Backend, "chat request failed with status " +
                                      std::to_string(outcome.status) + ": " + outcome.detail);
    }
    raise(ErrorKind::Backend, "retry budget exhausted after " +
                                  std::to_string(spec_.retry_budget + 1) +
                                  " attempts, last status " + std::to_string(last_status) +
                                  (last_detail.empty() ? "" : ": " + last_detail));
  }

  BackendKind kind() const override { return BackendKind::Http; }

 private:
  struct PostOutcome {
    bool ok = false;
    bool retryable = false;
    int status = 0;
    std::string content;
    std::string detail;
  };

  PostOutcome post_once(const std::string& body) {
    inflight_.acquire();
    httplib::Client client(spec_.base_url);
    client.set_connection_timeout(0, spec_.timeout_ms * 1000LL);
    client.set_read_timeout(spec_.timeout_ms / 1000, (spec_.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
    inflight_.release();

    PostOutcome out;
    if (!res) {
      out.retryable = true;  // connection failures and timeouts
      out.detail = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    if (res->status == 200) {
      try {
        const auto j = nlohmann::json::parse(res->body);
        out.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
        out.ok = true;
      } catch (const nlohmann::json::exception& e) {
        out.detail = std::string("malformed completion body: ") + e.what();
      }
      return out;
    }
    out.retryable = res->status == 429 || (res->status >= 500 && res->status <= 599);
    out.detail = res->body.substr(0, 200);
    return out;
  }

  BackendSpec spec_;
  std::string api_key_;
  std::counting_semaphore<> inflight_;
};

}  // namespace

std::unique_ptr<Backend> make_backend(const BackendSpec& spec) {
  validate(spec);
  switch (spec.kind) {
    case BackendKind::Http: return std::make_unique<HttpBackend>(spec);
    case BackendKind::ScriptedRec: return std::make_unique<ScriptedRecBackend>();
    case BackendKind::OracleUser: return std::make_unique<OracleUserBackend>();
    case BackendKind::ThresholdUser: return std::make_unique<ThresholdUserBackend>(spec.tau);
    case BackendKind::Replay: return std::make_unique<ReplayBackend>(spec.replay_path);
  }
  raise(ErrorKind::Config, "unreachable backend kind");
}

std::string chat(Backend& backend, const ChatRequest& request, RecordLog* log) {
  validate(request);
  const std::string response = backend.chat(request);
  if (log) log->add(chat_record(request.tag, response));
  return response;
}

}  // namespace afl
