#pragma once

#include <stdexcept>
#include <string>

namespace vif {

// Error taxonomy shared by all modules. Everything derives from
// std::runtime_error so callers can catch broadly or precisely.

struct InvalidArgumentError : std::runtime_error {
  explicit InvalidArgumentError(const std::string& what) : std::runtime_error(what) {}
};

struct NotPsdError : std::runtime_error {
  explicit NotPsdError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericOverflowError : std::runtime_error {
  explicit NumericOverflowError(const std::string& what) : std::runtime_error(what) {}
};

// Enumeration / iteration budgets exceeded (tree spaces too large, scan caps).
struct BudgetError : std::runtime_error {
  explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

struct UndefinedVarianceError : std::runtime_error {
  explicit UndefinedVarianceError(const std::string& what) : std::runtime_error(what) {}
};

// CSV / config parse failure. Locations are 1-based.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, long row, long column)
      : std::runtime_error(what + " (row " + std::to_string(row) + ", column " +
                           std::to_string(column) + ")"),
        row(row),
        column(column) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what), row(0), column(0) {}
  long row;
  long column;
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vif
