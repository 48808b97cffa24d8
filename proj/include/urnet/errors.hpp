#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace urnet {

// Base class for every failure this library reports.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Arguments violate a documented precondition.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Inputs are structurally valid but mathematically unusable
// (zero-norm vector, all-identical points, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// A configuration value is out of range or a config file is unreadable.
// Messages name the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An on-disk artifact is malformed. Carries the byte offset at which
// parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}

  std::size_t byte_offset;
};

// An artifact has a recognized magic but an unsupported version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss; the model still holds the last
// finite parameter state.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Every instance weight in a batch is zero; callers skip the batch.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace urnet
