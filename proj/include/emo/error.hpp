#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emo {

// Error classes map to distinct CLI exit codes; see tools/emolatent.cpp.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  FormatError(const std::string& msg, size_t byte_offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  size_t offset = 0;
};

struct PrerequisiteError : std::runtime_error {
  explicit PrerequisiteError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss/gradient/activation; carries the offending segment or stage.
struct NumericalDivergence : std::runtime_error {
  NumericalDivergence(const std::string& msg, const std::string& where)
      : std::runtime_error(msg + " [" + where + "]"), location(where) {}
  std::string location;
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace emo
