#pragma once

#include <stdexcept>
#include <string>

namespace lg {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: bad shapes/plans, out-of-range knobs, bad flags.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Invalid or missing data: files, scenes, manifests, scene/gt mismatches.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Numeric failure: non-finite values, misuse of the autodiff graph.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Tensor shape disagreement; message names both shapes.
class DimensionError : public ConfigError {
 public:
  explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

}  // namespace lg
