#pragma once

#include <stdexcept>
#include <string>

namespace lrope_lab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A parameter or configuration value violates a module invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

// Binding score requested for a person with no tokens.
class UndefinedScore : public Error {
 public:
  using Error::Error;
};

}  // namespace lrope_lab
