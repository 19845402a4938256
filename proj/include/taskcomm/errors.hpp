#pragma once

#include <stdexcept>
#include <string>

namespace taskcomm {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: a factorization broke down or a non-finite value appeared.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericError {
 public:
  explicit NotPositiveDefinite(const std::string& where)
      : NumericError("matrix is not positive definite: " + where) {}
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class RankTooLarge : public Error {
 public:
  using Error::Error;
};

class EmptyClass : public Error {
 public:
  explicit EmptyClass(int j)
      : Error("class " + std::to_string(j) + " has no samples") {}
};

class SingularFeatureBlock : public NumericError {
 public:
  explicit SingularFeatureBlock(int k)
      : NumericError("feature covariance block of device " + std::to_string(k) +
                     " is singular") {}
};

class BisectionFailed : public NumericError {
 public:
  using NumericError::NumericError;
};

class ZeroDiagonal : public NumericError {
 public:
  using NumericError::NumericError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace taskcomm
