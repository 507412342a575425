#pragma once

#include <stdexcept>
#include <string>

namespace fgm {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Shape or dimension mismatch, or a malformed graph.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite intermediate or failed factorization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or input file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fgm
