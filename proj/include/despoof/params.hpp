#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "despoof/autograd.hpp"
#include "despoof/rng.hpp"
#include "despoof/serialize.hpp"

namespace despoof {

/// Ordered collection of named trainable tensors.
template <class T>
class ParamSet {
 public:
  const Var<T>& add(const std::string& name, BasicTensor<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, Var<T>(std::move(init), true));
    return entries_.back().second;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  const Var<T>& add_fan_in(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    return add(name, rng.uniform_tensor<T>(std::move(shape), -bound, bound));
  }

  const Var<T>& add_zeros(const std::string& name, Shape shape) { return add(name, BasicTensor<T>::zeros(std::move(shape))); }

  const Var<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return entries_[it->second].second;
  }
  Var<T>& at(const std::string& name) { return entries_.at(index_.at(name)).second; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const noexcept { return entries_; }

  std::vector<Var<T>> vars() const {
    std::vector<Var<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  /// Total number of scalars.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.value().size();
    return n;
  }

  NamedTensors to_named() const {
    NamedTensors out;
    out.reserve(entries_.size());
    for (const auto& [n, v] : entries_) out.emplace_back(n, v.value().template cast<float>());
    return out;
  }

  /// Overwrites values from a container; names and shapes must match exactly.
  void load_named(const NamedTensors& tensors) {
    if (tensors.size() != entries_.size()) {
      throw FormatError("parameter count mismatch: expected " + std::to_string(entries_.size()) + ", found " +
                        std::to_string(tensors.size()));
    }
    for (const auto& [name, t] : tensors) {
      auto it = index_.find(name);
      if (it == index_.end()) throw FormatError("unexpected parameter '" + name + "'");
      auto& var = entries_[it->second].second;
      if (var.shape() != t.shape()) {
        throw FormatError("parameter '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(var.shape()));
      }
      var.mutable_value() = t.template cast<T>();
    }
  }

  /// Deep copy with fresh graph nodes, optionally changing precision.
  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [n, v] : entries_) out.add(n, v.value().template cast<U>());
    return out;
  }

  ParamSet clone() const { return cast<T>(); }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace despoof
