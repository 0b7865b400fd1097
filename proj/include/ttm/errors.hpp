#pragma once

#include <stdexcept>
#include <string>

namespace ttm {

/// Raised when the model reaches a numerically unusable state (all-zero
/// responsibilities, covariance that cannot be factorized, ...).
class DegeneracyError : public std::runtime_error {
public:
  explicit DegeneracyError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for invalid configuration values (schedule parameters, K < 2, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a corpus file cannot be parsed or violates its invariants.
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a checkpoint cannot be loaded (checksum, version, shape).
class LoadError : public std::runtime_error {
public:
  explicit LoadError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ttm
