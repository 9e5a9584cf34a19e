#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace depthprune {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation requires.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
  public:
    using Error::Error;
};

/// A caller broke an API precondition (wrong mask length, missing cond, ...).
class ContractError : public Error {
  public:
    using Error::Error;
};

/// A transformation or candidate construction has too few layers to move.
class InfeasibleError : public Error {
  public:
    using Error::Error;
};

class ParseError : public Error {
  public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what), position_(position) {}

    /// Byte offset (mask files) or 1-based line number (config files).
    std::size_t position() const { return position_; }

  private:
    std::size_t position_;
};

class CheckpointError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

}  // namespace depthprune
