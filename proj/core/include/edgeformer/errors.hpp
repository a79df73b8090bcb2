#pragma once

#include <stdexcept>
#include <string>

namespace edgeformer {

// Base for all library errors so callers can catch everything from one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimensions disagree with an operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

// Value-level contract violation: degenerate softmax row, label out of range,
// unknown node id, empty ego network, batch too small, and similar.
struct ValueError : Error {
  using Error::Error;
};

// Malformed input file; message names the offending line or field.
struct ParseError : Error {
  using Error::Error;
};

// Structural problem in a loaded network (dangling endpoints, bad split tag).
struct GraphError : Error {
  using Error::Error;
};

// A generator description that cannot be satisfied.
struct GeneratorSpecError : Error {
  using Error::Error;
};

// Non-finite loss or other numeric breakdown during training.
struct NumericError : Error {
  using Error::Error;
};

// Checkpoint contents disagree with the model built from them.
struct CheckpointError : Error {
  using Error::Error;
};

// Misuse of the tape: backward on detached or non-scalar output, reuse of a
// consumed tape.
struct AutogradError : Error {
  using Error::Error;
};

}  // namespace edgeformer
