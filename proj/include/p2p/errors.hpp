#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace p2p {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data breaks a model invariant (coefficients, bounds, roles, graph shape).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class RoleViolation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnknownNode : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SelfEdge : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DuplicateEdge : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

class EdgeSetMismatch : public Error {
 public:
  using Error::Error;
};

class Infeasible : public Error {
 public:
  using Error::Error;
};

class MaxIterations : public Error {
 public:
  using Error::Error;
};

class TooLarge : public Error {
 public:
  using Error::Error;
};

class GraphDisconnected : public Error {
 public:
  using Error::Error;
};

class PrivacyViolation : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Scenario text could not be parsed. `line` is 1-based, 0 when unknown;
/// `field` is a JSON-pointer-like path, empty when the failure is syntactic.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::string field)
      : Error(what), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

}  // namespace p2p
