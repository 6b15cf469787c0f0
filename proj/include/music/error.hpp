#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace music {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an operation's precondition (shape mismatch, empty mask, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Bytes do not follow the feature-store layout (magic, header, trailing data).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Fewer records than the header declares.
class TruncationError : public Error {
 public:
  using Error::Error;
};

/// A record carries invalid content (non-finite value, out-of-range class).
class DataError : public Error {
 public:
  DataError(const std::string& what, std::uint64_t record_index)
      : Error("record " + std::to_string(record_index) + ": " + what), record_index_(record_index) {}
  std::uint64_t record_index() const { return record_index_; }

 private:
  std::uint64_t record_index_;
};

/// The store cannot supply the requested episode.
class SamplingError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Loss became non-finite during SGD.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : NumericError(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace music
