#pragma once

#include <stdexcept>
#include <string>

namespace afl {

enum class ErrorKind {
  Parse,            // malformed input row / agent reply
  Reference,        // id not present in catalog or vocabulary
  Split,            // dataset split impossible
  Sampling,         // not enough eligible negatives
  Panel,            // sim panel cannot be built for this user
  Training,         // empty train set or bad hyperparameters
  Divergence,       // non-finite loss during training
  Render,           // prompt rendering failed
  Backend,          // chat backend exhausted its retry budget
  Replay,           // no recorded response for a request tag
  Config,           // bad config file / flag combination
  UndefinedMetric,  // metric over an empty case set
  Precondition,     // caller violated an operation contract
  Io,               // file system failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Reference: return "reference error";
    case ErrorKind::Split: return "split error";
    case ErrorKind::Sampling: return "sampling error";
    case ErrorKind::Panel: return "panel error";
    case ErrorKind::Training: return "training error";
    case ErrorKind::Divergence: return "divergence error";
    case ErrorKind::Render: return "rendering error";
    case ErrorKind::Backend: return "backend error";
    case ErrorKind::Replay: return "replay error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::UndefinedMetric: return "undefined-metric error";
    case ErrorKind::Precondition: return "precondition violation";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

}  // namespace afl
