#pragma once

#include <stdexcept>
#include <string>

namespace flowcorr {

/// Base for all library failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed config, inconsistent shapes, constraint violations.
/// The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite state produced while integrating a system.
class IntegrationError : public Error {
 public:
  using Error::Error;
};

/// Loss went non-finite during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was asked to run without the artifacts it consumes.
class DependencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowcorr
