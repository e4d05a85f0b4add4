#pragma once

#include <stdexcept>
#include <string>

namespace gmflow {

/// Bad input: an argument or config field violates its contract. `field` names
/// the offending parameter (e.g. "mixture.p") so callers can report it.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// A computation produced non-finite values or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gmflow
