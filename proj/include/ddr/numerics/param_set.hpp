#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ddr/numerics/tensor.hpp"

namespace ddr {

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  bool trainable = true;
};

/// Named tensors keyed by hierarchical path ("dam.layer.0.attn.wq").
/// Iteration order is lexicographic by name, which fixes serialization and
/// optimizer order.
template <typename T>
class ParamSet {
 public:
  using Map = std::map<std::string, ParamEntry<T>, std::less<>>;

  void add(std::string name, Tensor<T> value, bool trainable = true) {
    auto [it, inserted] = entries_.try_emplace(std::move(name), ParamEntry<T>{std::move(value), trainable});
    if (!inserted) throw std::invalid_argument("duplicate parameter name: " + it->first);
  }

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  const Tensor<T>& get(std::string_view name) const { return entry(name).value; }
  Tensor<T>& get_mut(std::string_view name) { return entry(name).value; }

  bool trainable(std::string_view name) const { return entry(name).trainable; }
  void set_trainable(std::string_view name, bool flag) { entry(name).trainable = flag; }

  void set_all_trainable(bool flag) {
    for (auto& [_, e] : entries_) e.trainable = flag;
  }
  void set_trainable_prefix(std::string_view prefix, bool flag) {
    for (auto& [name, e] : entries_) {
      if (std::string_view(name).starts_with(prefix)) e.trainable = flag;
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }
  std::vector<std::string> trainable_names() const { return names_where(true); }
  std::vector<std::string> frozen_names() const { return names_where(false); }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  std::size_t scalar_count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
      if (std::string_view(name).starts_with(prefix)) n += e.value.numel();
    }
    return n;
  }

  ParamSet filter_prefix(std::string_view prefix) const {
    ParamSet out;
    for (const auto& [name, e] : entries_) {
      if (std::string_view(name).starts_with(prefix)) out.entries_.emplace(name, e);
    }
    return out;
  }

  /// Union with another set; colliding names are an error.
  void merge(const ParamSet& other) {
    for (const auto& [name, e] : other.entries_) add(name, e.value, e.trainable);
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }
  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }

 private:
  const ParamEntry<T>& entry(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return it->second;
  }
  ParamEntry<T>& entry(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return it->second;
  }
  std::vector<std::string> names_where(bool flag) const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) {
      if (e.trainable == flag) out.push_back(name);
    }
    return out;
  }

  Map entries_;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>, std::less<>>;

/// True when every tensor in `a` has a bitwise-identical twin in `b`.
template <typename T>
bool params_bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (a.size() != b.size()) return false;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bitwise_equal(ia->second.value, ib->second.value)) return false;
  }
  return true;
}

}  // namespace ddr
