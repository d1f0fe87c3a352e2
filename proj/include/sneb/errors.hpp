#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sneb {

enum class ErrorKind {
  InvalidArgument,
  NumericalUnderflow,
  DegenerateUpdate,
  OracleScale,
  EmptyFile,
  MissingColumns,
  ParseError,
  InvalidValue,
  IoFailure,
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:    return "invalid-argument";
    case ErrorKind::NumericalUnderflow: return "numerical-underflow";
    case ErrorKind::DegenerateUpdate:   return "degenerate-update";
    case ErrorKind::OracleScale:        return "oracle-scale";
    case ErrorKind::EmptyFile:          return "empty-file";
    case ErrorKind::MissingColumns:     return "missing-columns";
    case ErrorKind::ParseError:         return "parse-error";
    case ErrorKind::InvalidValue:       return "invalid-value";
    case ErrorKind::IoFailure:          return "io-failure";
  }
  return "unknown";
}

// Every library failure is reported through this type. index() carries the
// offending observation/row when one exists, -1 otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::ptrdiff_t index = -1)
      : std::runtime_error(message), kind_(kind), index_(index) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::ptrdiff_t index() const noexcept { return index_; }
  const char* kind_name() const noexcept { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
  std::ptrdiff_t index_;
};

}  // namespace sneb
