#pragma once

#include <stdexcept>
#include <string>

namespace selfteach {

// Process exit codes used by the command-line tool.
enum class ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad flags, bad manifest, inconsistent stage inputs.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

// Malformed input files, schema violations, I/O failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  ValidationError(const std::string& field, const std::string& what)
      : DataError(field + ": " + what), field_(field), detail_(what) {}
  ValidationError(const std::string& file, std::size_t line, const std::string& field,
                  const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + field + ": " + what),
        field_(field),
        detail_(what),
        line_(line) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& detail() const noexcept { return detail_; }
  // 0 when the error was not raised while reading a file.
  std::size_t line() const noexcept { return line_; }

 private:
  std::string field_;
  std::string detail_;
  std::size_t line_ = 0;
};

class RetrievalError : public DataError {
 public:
  RetrievalError(const std::string& query, const std::string& what)
      : DataError("retrieval failed for query \"" + query + "\": " + what), query_(query) {}
  const std::string& query() const noexcept { return query_; }

 private:
  std::string query_;
};

class CheckpointError : public DataError {
 public:
  explicit CheckpointError(const std::string& what) : DataError("checkpoint: " + what) {}
};

// Shape mismatches between parameters, encodings and labels.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ExitCode::kData, what) {}
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& instance_id, const std::string& what)
      : Error(ExitCode::kNumerical, "instance " + instance_id + ": " + what),
        instance_id_(instance_id) {}
  const std::string& instance_id() const noexcept { return instance_id_; }

 private:
  std::string instance_id_;
};

}  // namespace selfteach
