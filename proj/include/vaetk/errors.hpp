#pragma once

#include <stdexcept>
#include <string>

namespace vaetk {

// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Value outside an operation's mathematical domain (log of <= 0, division by 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture or configuration description.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Malformed binary container (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed file whose contents disagree with its own embedded description.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Linear system that the ridge term cannot rescue.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Malformed run configuration or command-line arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite objective during training.
class NumericalError : public Error {
 public:
  NumericalError(std::size_t epoch, std::size_t batch, std::string term)
      : Error("non-finite " + term + " at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch),
        term_(std::move(term)) {}

  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }
  const std::string& term() const { return term_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
  std::string term_;
};

}  // namespace vaetk
