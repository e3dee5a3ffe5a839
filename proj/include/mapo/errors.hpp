#pragma once

#include <stdexcept>
#include <string>

namespace mapo {

// Group of rollouts that cannot be normalized (G < 2, empty, out-of-range rewards).
class InvalidGroupError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad configuration value, unknown estimator kind, unknown profile, ...
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a precondition (mismatched lengths, token outside the vocabulary).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the mathematical domain of a closed-form expression.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A group whose gradient ratio is undefined (N in {0, G}).
class DegenerateGroupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during training. `dump()` holds a textual
// description of the offending group for post-mortem inspection.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const noexcept { return dump_; }

 private:
  std::string dump_;
};

}  // namespace mapo
