#pragma once

#include <stdexcept>
#include <string>

namespace tsa {

// Every failure the library reports derives from Error. The CLI maps the
// concrete type onto an exit code, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (box tracks, manifests, tensors).
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public UsageError {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : UsageError("config field '" + field + "': " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// NaN/Inf appeared in a computation that must stay finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsa
