#pragma once

#include <stdexcept>
#include <string>

namespace flowloc {

// Base for every error raised by the library. The CLI maps the subclasses
// onto exit codes: UsageError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Shape or argument contract violated by a caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed, missing or inconsistent input data (files, annotations, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed by a numerical routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowloc
