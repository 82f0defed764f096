// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gridtst {

// Base of every error the library raises. The C API maps each subclass onto
// a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Input file does not exist.
class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridtst
