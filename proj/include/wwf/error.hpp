#pragma once

#include <stdexcept>
#include <string>

namespace wwf {

// Base for every error raised by the library. Subclasses carry the module
// context so callers can report failures by category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model / experiment / training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data. Row is 1-based within the file, or 0
// when the problem is not tied to a specific row.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t row = 0)
      : Error(row > 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_ = 0;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace wwf
