#pragma once

#include <stdexcept>
#include <string>

namespace usca {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or row counts do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented precondition (asymmetry, non-finite entries,
/// non-centered data, out-of-range labels, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Every eigenvalue of a covariance fell below the rank threshold.
class DegenerateCovarianceError : public Error {
 public:
  using Error::Error;
};

/// Rank precondition of a fitting routine failed.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Training produced a NaN or runaway loss. `term` names the offending part.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& term, const std::string& what)
      : Error(what), term_(term) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

/// Malformed text or binary input.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace usca
