#include "spatialrl/diff/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace spatialrl::diff {

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("ParameterSet: duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

Tensor& ParameterSet::add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                                 bool trainable) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(fan_in * fan_out);
  for (auto& v : values) v = dist(rng);
  return add(std::move(name), Tensor::from({fan_in, fan_out}, std::move(values), trainable));
}

Tensor& ParameterSet::add_zeros(std::string name, Shape shape, bool trainable) {
  return add(std::move(name), Tensor::zeros(std::move(shape), trainable));
}

Tensor& ParameterSet::add_filled(std::string name, Shape shape, double value, bool trainable) {
  return add(std::move(name), Tensor::filled(std::move(shape), value, trainable));
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("ParameterSet: no parameter '" + std::string(name) + "'");
}

Tensor& ParameterSet::get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).get(name));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

std::vector<Tensor> ParameterSet::with_prefix(std::string_view prefix) const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : entries_) {
    if (n.starts_with(prefix)) out.push_back(t);
  }
  return out;
}

std::vector<Tensor> ParameterSet::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (e.second.requires_grad()) out.push_back(e.second);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

ParameterSet ParameterSet::snapshot() const {
  ParameterSet copy;
  copy.entries_.reserve(entries_.size());
  for (const auto& [n, t] : entries_) copy.entries_.emplace_back(n, t.clone());
  return copy;
}

void ParameterSet::assign_from(const ParameterSet& other) {
  if (other.entries_.size() != entries_.size()) throw std::invalid_argument("ParameterSet::assign_from: size mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& [n, t] = entries_[i];
    const auto& [on, ot] = other.entries_[i];
    if (n != on || t.shape() != ot.shape()) {
      throw std::invalid_argument("ParameterSet::assign_from: mismatch at '" + n + "' vs '" + on + "'");
    }
    std::copy(ot.data().begin(), ot.data().end(), t.mutable_data().begin());
  }
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [n, t] : other.entries_) add(n, t);
}

bool ParameterSet::values_equal(const ParameterSet& other) const {
  if (other.entries_.size() != entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.first != b.first || a.second.shape() != b.second.shape()) return false;
    const auto av = a.second.data();
    const auto bv = b.second.data();
    for (std::size_t j = 0; j < av.size(); ++j) {
      if (std::bit_cast<std::uint64_t>(av[j]) != std::bit_cast<std::uint64_t>(bv[j])) return false;
    }
  }
  return true;
}

std::uint64_t checksum(const ParameterSet& params, std::string_view prefix) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [n, t] : params.entries()) {
    if (!n.starts_with(prefix)) continue;
    for (double v : t.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace spatialrl::diff
