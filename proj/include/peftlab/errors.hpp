#pragma once

#include <stdexcept>
#include <string>

namespace peftlab {

// Shape or dimension mismatch between tensors.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value, unknown configuration key, or incompatible
// configurations.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Label outside the expected range, or a label sequence that cannot be
// aligned to the given number of frames.
struct LabelError : std::runtime_error {
  explicit LabelError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value encountered where a finite one is required.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Parameter name that does not resolve against the parameter inventory.
struct InventoryError : std::runtime_error {
  explicit InventoryError(const std::string& msg) : std::runtime_error(msg) {}
};

// File or stream failure, including malformed serialized data.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace peftlab
