// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixpert {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Base for on-disk format problems (corpus and checkpoint files).
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  ChecksumError(const std::string& what, std::ptrdiff_t record)
      : FormatError(what), record_(record) {}

  // Index of the failing record, or -1 for whole-file checksums.
  std::ptrdiff_t record() const { return record_; }

 private:
  std::ptrdiff_t record_;
};

// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed; carries the stage name and the last good artifact.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string last_good, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what),
        stage_(std::move(stage)),
        last_good_(std::move(last_good)) {}

  const std::string& stage() const { return stage_; }
  const std::string& last_good() const { return last_good_; }

 private:
  std::string stage_;
  std::string last_good_;
};

}  // namespace mixpert
