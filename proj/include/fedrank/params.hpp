#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedrank/tensor.hpp"

namespace fedrank {

// Named, ordered collection of parameter tensors. Order is fixed at
// construction and is the canonical order for serialization, aggregation,
// and optimizer state, so two sets built from the same config line up
// index-for-index. Each entry carries a privacy flag: private tensors must
// never leave the client that owns them.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool is_private = false;
  };

  void add(std::string name, Tensor t, bool is_private) {
    if (index_.count(name))
      throw std::runtime_error("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(t), is_private});
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const Entry* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("no parameter named " + name);
    return entries_[it->second].tensor;
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("no parameter named " + name);
    return entries_[it->second].tensor;
  }

  std::size_t size() const { return entries_.size(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace fedrank
