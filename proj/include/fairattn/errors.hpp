#pragma once

#include <stdexcept>
#include <string>

namespace fairattn {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated a documented precondition (shape mismatch, bad index, ...).
struct ContractViolation : Error {
  explicit ContractViolation(const std::string& msg) : Error(msg) {}
};

// Malformed input data: CSV cells, schema descriptors, incompatible files.
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// A metric has no defined value on the given input (single-class AUROC, ...).
struct UndefinedMetricError : Error {
  explicit UndefinedMetricError(const std::string& msg) : Error(msg) {}
};

// Numeric failure at runtime: non-finite loss, unreliable gradient check.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace fairattn
