#pragma once

#include <stdexcept>
#include <string>

namespace attnground {

// Base class so callers can catch everything the library throws in one place.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A structure violates one of its invariants (shape, softmax sums, token flags...).
class ValidationError : public Error {
  public:
    using Error::Error;
};

// Bad magic, unsupported version or dtype, malformed sidecar.
class FormatError : public Error {
  public:
    using Error::Error;
};

// Payload length does not match what the header promises.
class SizeMismatchError : public FormatError {
  public:
    using FormatError::FormatError;
};

class IoError : public Error {
  public:
    using Error::Error;
};

// Input carries no usable signal (constant map, empty selection on an axis).
class DegenerateInputError : public Error {
  public:
    using Error::Error;
};

// Caller passed arguments outside an operation's domain.
class ArgumentError : public Error {
  public:
    using Error::Error;
};

}  // namespace attnground
