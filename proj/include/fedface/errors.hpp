#pragma once

#include <stdexcept>
#include <string>

namespace fedface {

// Base of every error thrown by the library. The CLI prints what() as a
// single structured line and exits nonzero.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

class UnitNormError : public Error {
 public:
  using Error::Error;
};

class NotEnoughClassesError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  enum class Kind { BadVersion, Truncated, LengthMismatch, UnknownType, BadPayload };

  DecodeError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fedface
