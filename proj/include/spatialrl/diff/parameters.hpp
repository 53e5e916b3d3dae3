#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spatialrl/diff/tensor.hpp"

namespace spatialrl::diff {

using Rng = std::mt19937_64;

// Ordered, named collection of leaf tensors. Names are namespaced with a
// "group/" prefix ("fusion/gate", "policy/vel_w1", ...).
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  // Uniform in +-sqrt(6 / (fan_in + fan_out)) for a [fan_in, fan_out] matrix.
  Tensor& add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng, bool trainable = true);
  Tensor& add_zeros(std::string name, Shape shape, bool trainable = true);
  Tensor& add_filled(std::string name, Shape shape, double value, bool trainable = true);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // Entries whose name starts with prefix, in insertion order.
  std::vector<Tensor> with_prefix(std::string_view prefix) const;
  std::vector<Tensor> trainable() const;

  void zero_grad();
  // Independent deep copy; gradients are not copied.
  ParameterSet snapshot() const;
  // Copies values from other; names and shapes must match exactly.
  void assign_from(const ParameterSet& other);
  // Merges all entries of other (names must not collide).
  void merge(const ParameterSet& other);

  bool values_equal(const ParameterSet& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Order-sensitive FNV-1a hash of the raw bit patterns of all values.
std::uint64_t checksum(const ParameterSet& params, std::string_view prefix = {});

}  // namespace spatialrl::diff
