#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tpc {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when operand shapes are incompatible with an operation.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const std::vector<std::pair<int, int>>& shapes,
             const std::string& detail = "")
      : Error(format(op, shapes, detail)) {}

 private:
  static std::string format(const std::string& op,
                            const std::vector<std::pair<int, int>>& shapes,
                            const std::string& detail) {
    std::ostringstream os;
    os << op << ": incompatible shapes";
    for (size_t i = 0; i < shapes.size(); ++i) {
      os << (i == 0 ? " " : ", ") << shapes[i].first << "x" << shapes[i].second;
    }
    if (!detail.empty()) os << " (" << detail << ")";
    return os.str();
  }
};

// Raised when an operation produces or consumes a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace tpc
