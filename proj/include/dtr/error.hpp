#pragma once

#include <stdexcept>
#include <string>

namespace dtr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or invalid trajectory data (parse failures, bad labels, non-finite cells).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Singular moment Gram matrix that the solver ridge could not rescue.
class DegenerateDesign : public Error {
 public:
  using Error::Error;
};

/// A nuisance learner could not be fit (bad spec, singular design, ...).
class LearnerError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent shapes between features, parameters and data.
class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace dtr
