#pragma once

#include <stdexcept>
#include <string>

namespace mave {

// Thrown when a numeric computation produces NaN or Inf (checked in the
// double-precision instantiation of the tensor library).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on malformed inputs: bad token grids, bad manifests, bad configs,
// shape mismatches, out-of-range ids.
struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on unreadable/corrupt files (magic mismatch, truncation, io failure).
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mave
