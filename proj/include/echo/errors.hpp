// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace echo {

/// Operand shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an operation (empty softmax, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Broken caller contract (e.g. backward on a non-scalar node).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad data: out-of-vocabulary token, label out of range, malformed file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Task or experiment settings that cannot be honoured.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed ListOps expression. Carries the offending character offset.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Numeric failure during training or gradient checking (NaN loss, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model / experiment configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace echo
