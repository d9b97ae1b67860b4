#pragma once

#include <stdexcept>
#include <string>

namespace wgprof {

enum class ErrorKind {
  Parse,
  Validate,
  Instrument,
  Lower,
  Capacity,
  Deadlock,
  Trace,
  Config,
  Io,
};

// All failures surface as Error. `category()` is the stable machine-parsable
// string the CLI prints as the first token of its error line.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  const char* category() const {
    switch (kind_) {
    case ErrorKind::Parse:
      return "parse-error";
    case ErrorKind::Validate:
      return "validate-error";
    case ErrorKind::Instrument:
      return "instrument-error";
    case ErrorKind::Lower:
      return "lower-error";
    case ErrorKind::Capacity:
      return "capacity-error";
    case ErrorKind::Deadlock:
      return "simulation-deadlock";
    case ErrorKind::Trace:
      return "trace-error";
    case ErrorKind::Config:
      return "config-error";
    case ErrorKind::Io:
      return "io-error";
    }
    return "error";
  }

private:
  ErrorKind kind_;
};

} // namespace wgprof
