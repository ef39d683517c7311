#pragma once

#include <stdexcept>
#include <string>

namespace fedrank {

// User-correctable: bad config values, malformed inputs. CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Client/server schema or message violations.
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EvalError : std::runtime_error {
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedrank
