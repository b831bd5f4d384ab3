#pragma once

#include <stdexcept>
#include <string>

namespace gen3d {

/// A precondition of an operation was violated by the caller.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or otherwise could not be
/// evaluated.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed config or manifest text. Carries the offending key and line.
struct ParseError : std::runtime_error {
  ParseError(const std::string& key, int line, const std::string& what)
      : std::runtime_error(format(key, line, what)), key_(key), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& key, int line, const std::string& what) {
    std::string msg = "line " + std::to_string(line);
    if (!key.empty()) msg += ", key '" + key + "'";
    return msg + ": " + what;
  }

  std::string key_;
  int line_;
};

/// Dataset failed validation on load.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace gen3d
