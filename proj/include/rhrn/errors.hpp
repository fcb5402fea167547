#pragma once

#include <stdexcept>
#include <string>

namespace rhrn {

// Bad shapes, bad arguments, malformed inputs. CLI exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An artifact (checkpoint, config) that does not fit the model it is
// applied to. CLI exit code 3.
class IncompatibleArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf encountered during computation. CLI exit code 4.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rhrn
