#pragma once

#include <stdexcept>
#include <string>

namespace growthsim {

// One exception type per failure mode so callers can react per contract.

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A single malformed CSV row; carries the 1-based row number (header is row 1)
// and the offending column.
class RowError : public std::runtime_error {
 public:
  RowError(std::size_t row, std::string column, const std::string& detail)
      : std::runtime_error("row " + std::to_string(row) + ", column \"" + column +
                           "\": " + detail),
        row_(row),
        column_(std::move(column)) {}
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class AssemblyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotConvergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnderDeterminedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StrategyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace growthsim
