#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relulab {

// Bad caller-supplied value: wrong dimension, out-of-range knob.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A hypothesis of a construction is violated (depth mismatch, delta too large, ...).
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at byte " + std::to_string(position) + ")"), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Verify-and-refine loop ran out of rounds.
class BuildError : public std::runtime_error {
 public:
  BuildError(const std::string& what, double best_error)
      : std::runtime_error(what), best_error_(best_error) {}

  double best_error() const noexcept { return best_error_; }

 private:
  double best_error_;
};

}  // namespace relulab
