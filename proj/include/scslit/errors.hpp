#pragma once

#include <stdexcept>
#include <string>

namespace scslit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Evaluation at a singular point, invalid exponents, out-of-range arguments.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Quadrature did not reach its tolerance; carries the achieved estimate.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double estimate)
      : Error(what), estimate_(estimate) {}
  double estimate() const noexcept { return estimate_; }

 private:
  double estimate_;
};

class RootNotFoundError : public Error {
 public:
  using Error::Error;
};

/// Two prevertices coincide (or nearly so) where the formulas need them apart.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Adaptive step size fell below the floor.
class StiffnessError : public Error {
 public:
  using Error::Error;
};

/// An invariant that the algorithms maintain was observed broken.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class ConditioningError : public Error {
 public:
  using Error::Error;
};

class DampingError : public Error {
 public:
  using Error::Error;
};

}  // namespace scslit
