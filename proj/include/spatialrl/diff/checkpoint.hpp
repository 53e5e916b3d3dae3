#pragma once

// Checkpoint layout:
//
//   spatialrl-checkpoint 1\n
//   <count>\n
//   <name> <byte-offset> <rank> <d0> ... <dn-1>\n     (one line per tensor)
//   data\n
//   <raw little-endian IEEE-754 float64 values, tensors back to back>
//
// Offsets are relative to the first byte after "data\n". Round trips are
// bit-exact.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "spatialrl/diff/parameters.hpp"

namespace spatialrl::diff {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string encode_checkpoint(const ParameterSet& params);
// Decoded tensors do not require gradients.
ParameterSet decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet read_checkpoint(const std::filesystem::path& path);
// Copies values into an existing set; every name and shape must match.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& into);
void load_values(const ParameterSet& source, ParameterSet& into);

}  // namespace spatialrl::diff
