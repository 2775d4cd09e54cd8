#pragma once

#include <stdexcept>
#include <string>

namespace seldpo {

// Bad inputs: malformed config values, schema violations, out-of-range ids.
// The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// OS-level file trouble (open/read/write/rename failures). CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses/gradients and other numeric breakdowns. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace seldpo
