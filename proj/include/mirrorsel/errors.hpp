#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mirrorsel {

/// Precondition or shape violation on a public operation.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input that makes a statistic undefined (e.g. zero projected norm).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite value produced during a forward/backward pass or an update.
/// `layer` is the tail layer index (0 = first-layer output), `iteration`
/// the SGD step when raised from training, otherwise -1.
class NumericOverflow : public std::runtime_error {
 public:
  NumericOverflow(const std::string& what, long layer, long iteration = -1)
      : std::runtime_error(what), layer_(layer), iteration_(iteration) {}

  long layer() const noexcept { return layer_; }
  long iteration() const noexcept { return iteration_; }

 private:
  long layer_;
  long iteration_;
};

/// Malformed or missing configuration / artifact files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mirrorsel
