// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace normcl {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};
class AlignmentError : public Error {
 public:
  using Error::Error;
};
class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class ValidationError : public Error {
 public:
  using Error::Error;
};
class IndexError : public Error {
 public:
  using Error::Error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ContractViolation : public Error {
 public:
  using Error::Error;
};
class DegenerateStateError : public Error {
 public:
  using Error::Error;
};
class LoadError : public Error {
 public:
  using Error::Error;
};
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace normcl
