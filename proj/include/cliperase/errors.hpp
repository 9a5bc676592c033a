#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cliperase {

// Every failure raised by the library derives from Error so callers can
// catch the family; the concrete type carries the category.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Invalid dimensions, hyperparameters, or degenerate experiment setup.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Matrix or batch dimensions that do not line up.
class ShapeError : public Error {
  public:
    using Error::Error;
};

// Data that violates an operation's precondition (empty batch, OOV token, ...).
class InputError : public Error {
  public:
    using Error::Error;
};

// Write attempted on a frozen parameter set.
class MutationError : public Error {
  public:
    using Error::Error;
};

// A loss evaluated to NaN/Inf during optimization.
class DivergenceError : public Error {
  public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("divergence at step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

  private:
    std::size_t step_;
};

// Malformed text file; `line` is 1-based.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class FormatVersionError : public Error {
  public:
    using Error::Error;
};

// Checkpoint that cannot be trusted (bad magic, digest mismatch, truncation).
class LoadError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

}  // namespace cliperase
