#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vgs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure talking to (or interpreting) a policy/embedding/judge provider.
class ProviderError : public Error {
 public:
  using Error::Error;
  virtual bool retryable() const noexcept { return false; }
};

/// Transport failure or timeout; safe to retry.
class NetworkError : public ProviderError {
 public:
  using ProviderError::ProviderError;
  bool retryable() const noexcept override { return true; }
};

/// Provider answered, but the answer is unusable (4xx, malformed JSON, ...).
class ProtocolError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class ImageError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// Optional capability (e.g. the judge) used without being configured.
class CapabilityDisabledError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or similar numerical breakdown.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t batch_index)
      : Error(what), batch_index_(batch_index) {}
  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

/// Malformed input file. `line()` is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaVersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// The policy produced nothing usable (e.g. EOS at the very first step).
class DegeneratePolicyError : public Error {
 public:
  using Error::Error;
};

}  // namespace vgs
