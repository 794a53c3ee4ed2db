#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pad {

// Shape or dimensionality mismatch between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid argument value (bad flag, out-of-range parameter, empty input).
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value produced by a numeric kernel, or a numeric abort.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File missing, unreadable, or malformed.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

}  // namespace pad
