#pragma once

#include <stdexcept>
#include <string>

namespace levyfilter {

enum class ErrorKind {
  invalid_argument,
  unsupported_measure,
  model_violation,
  integration_failure,
  stiffness_rejected,
  extrapolation,
  config,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error(ErrorKind::invalid_argument, message) {}
};

class UnsupportedMeasure : public Error {
 public:
  explicit UnsupportedMeasure(const std::string& message)
      : Error(ErrorKind::unsupported_measure, message) {}
};

// A coefficient left the range the model promises (e.g. an intensity outside (0,1]).
class ModelViolation : public Error {
 public:
  explicit ModelViolation(const std::string& message)
      : Error(ErrorKind::model_violation, message) {}
};

class IntegrationFailure : public Error {
 public:
  IntegrationFailure(const std::string& message, double time)
      : Error(ErrorKind::integration_failure, message), time_(time) {}

  /// First grid time at which a non-finite state appeared.
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class StiffnessRejected : public Error {
 public:
  explicit StiffnessRejected(const std::string& message)
      : Error(ErrorKind::stiffness_rejected, message) {}
};

class ExtrapolationError : public Error {
 public:
  explicit ExtrapolationError(const std::string& message)
      : Error(ErrorKind::extrapolation, message) {}
};

// Malformed configuration; the message names the offending key.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ErrorKind::config, message) {}
};

}  // namespace levyfilter
