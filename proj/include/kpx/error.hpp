#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kpx {

// Caller broke a documented precondition (shape mismatch, empty set where a
// non-empty one is required, overlapping spans, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input data could not be parsed. `line` is 1-based, 0 when not applicable.
class MalformedInput : public std::runtime_error {
 public:
  MalformedInput(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what
                                : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A non-finite value appeared during numeric evaluation.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kpx
