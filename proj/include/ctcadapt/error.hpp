// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ctcadapt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition (non-scalar loss, h <= 0, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Configuration failed validation. The message names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class PolicyError : public Error {
 public:
  using Error::Error;
};

// Adapter slot already occupied.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class SequenceTooShortError : public Error {
 public:
  using Error::Error;
};

// Target cannot be aligned to the available frames.
class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

class OracleSizeError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / dataset does not match the configuration it is used with.
class ArtifactMismatchError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctcadapt
