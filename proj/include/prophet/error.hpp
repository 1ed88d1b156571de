#pragma once

#include <stdexcept>
#include <string>

namespace prophet {

// Base of every error raised by the library. `exit_code()` is what the CLI
// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

// Malformed or inconsistent on-disk artifact (manifest, bank, vocabulary).
class ArtifactError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

// Bad user configuration or precondition violation on an operation's input.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

// A numerical or structural invariant failed at runtime.
class InvariantError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class GatewayError : public Error {
 public:
  enum class Kind { exhausted, auth, malformed, rejected, empty_completion, unknown_prompt };

  GatewayError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }
  int exit_code() const noexcept override { return 3; }

 private:
  Kind kind_;
};

}  // namespace prophet
