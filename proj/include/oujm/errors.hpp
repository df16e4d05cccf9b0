#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace oujm {

// Error taxonomy shared by all modules.  The CLI maps each class to a
// distinct exit code; library users can catch the base type.

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Cholesky failure; `pivot` is the zero-based index of the failing pivot.
struct DecompositionError : Error {
  int pivot;
  DecompositionError(const std::string& msg, int pivot_index)
      : Error(msg), pivot(pivot_index) {}
};

struct SingularityError : Error {
  explicit SingularityError(const std::string& msg) : Error(msg) {}
};

struct OrderingError : Error {
  explicit OrderingError(const std::string& msg) : Error(msg) {}
};

struct ConstraintError : Error {
  explicit ConstraintError(const std::string& msg) : Error(msg) {}
};

struct StructuralError : Error {
  explicit StructuralError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Configuration validation reports every violation, not just the first.
struct ConfigError : Error {
  std::vector<std::string> violations;
  explicit ConfigError(std::vector<std::string> v)
      : Error(join(v)), violations(std::move(v)) {}

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration:";
    for (const auto& s : v) {
      out += "\n  - ";
      out += s;
    }
    return out;
  }
};

}  // namespace oujm
