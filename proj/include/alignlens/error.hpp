#pragma once

#include <stdexcept>
#include <string>

namespace alignlens {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed files: truncated containers, bad JSON, unparseable numbers.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a contract (shape mismatch, NaN weights, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace alignlens
