#pragma once

#include <stdexcept>
#include <string>

namespace irkit {

// Argument outside the mathematical or physiological domain of an operation.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input file does not match the documented column dictionary.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or infinity surfaced at an operation boundary.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric is not defined for the given input (single class, zero variance).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace irkit
