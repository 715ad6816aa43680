#pragma once

#include <stdexcept>
#include <string>

namespace qf {

// Bad user configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failures; reported as data errors by the CLI.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

// A pipeline stage could not complete (CLI exit code 4).
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during model training.
class TrainingError : public StageError {
 public:
  using StageError::StageError;
};

}  // namespace qf
