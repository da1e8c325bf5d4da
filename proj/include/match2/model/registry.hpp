#pragma once

#include <string>
#include <vector>

#include "match2/core/tensor.hpp"

namespace match2 {

// Named parameter list in a fixed, deterministic order. Entries alias the
// model's tensors, so optimizer updates through the registry mutate the model.
template <typename T>
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    TensorT<T> tensor;
  };

  void add(std::string name, const TensorT<T>& tensor) {
    for (const auto& e : entries_)
      if (e.name == name)
        throw_error(ErrorCategory::kContract, "duplicate parameter name " + name);
    entries_.push_back({std::move(name), tensor});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

  int64_t total_values() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  const TensorT<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace match2
