#pragma once

#include <stdexcept>
#include <string>

namespace deep_eprop {

// Mismatched matrix/vector dimensions. Messages name both operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or invalid network spec documents (parse location or the
// offending id is carried in the message).
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A configurable resource cap was exceeded (path enumeration, memory guard).
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; the message names the episode.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace deep_eprop
