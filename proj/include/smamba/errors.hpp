#pragma once

#include <stdexcept>
#include <string>

namespace smamba {

// Base for every error raised by the library. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (e.g. a >= 0 for ZOH).
class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// An equivalence or invariant check failed at runtime.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace smamba
