#ifndef MARLSIM_ERRORS_HPP_
#define MARLSIM_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace marlsim {

// Malformed structured text. `line` is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// A value parsed fine but breaks a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/inf reached a place that must stay finite (gradients, losses).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not allowed in the current state (e.g. step after done).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace marlsim

#endif  // MARLSIM_ERRORS_HPP_
