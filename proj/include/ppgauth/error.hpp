#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ppgauth {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or configuration violation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Tensor shape mismatch between operands of a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Metric whose denominator is zero (e.g. sensitivity with no positives).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

// Malformed input file. line/column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(std::string path, std::size_t line, std::size_t column, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        path_(std::move(path)),
        line_(line),
        column_(column) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::string path_;
  std::size_t line_;
  std::size_t column_;
};

// Failure inside one stage of a multi-stage pipeline.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace ppgauth
