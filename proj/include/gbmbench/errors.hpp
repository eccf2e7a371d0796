#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gbm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unsupported or malformed file header. The message names the header field.
class FormatError : public Error {
 public:
  FormatError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// File payload shorter than its header promises.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the arguments was violated (grid mismatch, bad range...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An operation needed a nonempty region (or positive total weight).
class EmptyRegionError : public Error {
 public:
  using Error::Error;
};

/// Inputs admit no meaningful result (no dynamics, all-zero cell map...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class NumericalInstabilityError : public Error {
 public:
  NumericalInstabilityError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Manifest or configuration content failed validation. `pointer` is a JSON
/// pointer to the offending value when one applies; `missing` lists every
/// referenced file that does not exist.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::string pointer = {}, std::vector<std::string> missing = {})
      : Error(pointer.empty() ? what : pointer + ": " + what), pointer_(std::move(pointer)), missing_(std::move(missing)) {}
  const std::string& pointer() const noexcept { return pointer_; }
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::string pointer_;
  std::vector<std::string> missing_;
};

/// No subject of a cohort survived to aggregation.
class CohortError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gbm
