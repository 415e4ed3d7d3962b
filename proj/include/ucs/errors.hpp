#pragma once

#include <stdexcept>

namespace ucs {

/// Malformed or truncated file contents (measurements, checkpoints, images).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration: out-of-range values, unknown keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace ucs
