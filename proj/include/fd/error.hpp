#pragma once

#include <stdexcept>
#include <string>

namespace fd {

/// Bad model/op configuration: shape mismatches, invalid hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Caller broke an API contract (wrong argument, missing precondition).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset or checkpoint file problems.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value encountered where training must stop.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fd
