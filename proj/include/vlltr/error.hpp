#pragma once

#include <stdexcept>
#include <string>

namespace vlltr {

// Base for every error the library raises. The CLI maps subclasses onto exit
// codes: ValidationError/ShapeError/IoError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
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

}  // namespace vlltr
