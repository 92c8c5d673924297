#pragma once

#include <stdexcept>
#include <string>

namespace seggan {

/// Invalid shapes, sizes or hyperparameters. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or out-of-range input data (files, label values, distributions).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A dataset file problem. `kind` tells the failures apart.
class DataError : public InputError {
 public:
  enum class Kind { Unreadable, SizeMismatch, LabelOutOfRange, BadFormat };
  DataError(Kind kind, const std::string& what) : InputError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// A loss or tensor became NaN/Inf during training. Maps to exit code 3.
class NumericalDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace seggan
