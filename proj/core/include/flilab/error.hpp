#pragma once

#include <stdexcept>
#include <string>

namespace flilab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or histogram shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An object was used in a state that does not permit the call.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `field()` holds the dotted path of the key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Input that cannot be processed (empty mask, zero counts, ...).
class UndefinedInputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorCode { bad_magic, unsupported_version, truncated, shape_mismatch, missing_tensor };

const char* to_string(FormatErrorCode code) noexcept;

/// Malformed binary container (FLD1 / FLW1 / FLO1).
class FormatError : public Error {
 public:
  FormatError(FormatErrorCode code, const std::string& message)
      : Error(std::string(to_string(code)) + ": " + message), code_(code) {}
  FormatErrorCode code() const noexcept { return code_; }

 private:
  FormatErrorCode code_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace flilab
