#pragma once

#include <stdexcept>
#include <string>

namespace fairflow {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration or hyperparameters.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Missing columns, unparseable cells, empty groups.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Non-finite values produced by a forward or backward pass.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

/// Caller violated an API precondition (e.g. non-scalar loss).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// A metric has no defined value on the given input.
class MetricUndefined : public Error {
 public:
  explicit MetricUndefined(const std::string& what) : Error(ExitCode::kData, what) {}
};

}  // namespace fairflow
