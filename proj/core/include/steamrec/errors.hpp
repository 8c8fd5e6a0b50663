#pragma once

#include <stdexcept>
#include <string>

namespace steamrec {

// Shape mismatch between matrices or between a tensor and its config.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value or combination.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A caller violated a documented precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input text (interaction logs, config files).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure: missing file, unwritable directory, short read.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt or incompatible checkpoint.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace steamrec
