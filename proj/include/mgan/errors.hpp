#pragma once

#include <stdexcept>
#include <string>

namespace mgan {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside an operation's mathematical domain (empty mask, empty confusion, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// A function evaluated during gradient checking returned a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by gradient clipping when a gradient entry is NaN or infinite.
class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::string param, const std::string& what)
      : std::runtime_error(what), param_(std::move(param)) {}

  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

}  // namespace mgan
