#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace longppl {

// Base of every error raised by the toolkit. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed tokenizer tables, invalid hyperparameters, bad config documents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a precondition (length mismatch, out-of-range span).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ScoringError : public Error {
 public:
  ScoringError(std::size_t token_index, const std::string& what)
      : Error("token " + std::to_string(token_index) + ": " + what),
        token_index_(token_index) {}

  std::size_t token_index() const noexcept { return token_index_; }

 private:
  std::size_t token_index_;
};

// The remote endpoint answered, but not in the agreed shape.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// line is 1-based; 0 when the input is not line-oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed record whose values violate a domain bound (e.g. logp > 0).
class ValidationError : public ParseError {
 public:
  using ParseError::ParseError;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace longppl
