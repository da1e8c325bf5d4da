#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "match2/common.hpp"

namespace match2 {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Row-major strides.
inline std::vector<int64_t> shape_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty unless requires_grad and touched
  bool requires_grad = false;
};

}  // namespace detail

// Dense n-d array of T (float in training, double in the gradient-check
// harness). Copies are shallow: two Tensor handles may alias one storage.
// Values are treated as immutable once an op has produced them; in-place
// mutation is reserved for parameter updates between steps.
template <typename T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.data_ = std::make_shared<detail::TensorStorage<T>>();
    t.data_->shape = std::move(shape);
    check_extents(t.data_->shape);
    t.data_->values.assign(static_cast<size_t>(shape_numel(t.data_->shape)), T(0));
    t.data_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(Shape shape, T value) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static TensorT scalar(T value) { return full({1}, value); }

  static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw_error(ErrorCategory::kDimension,
                  "tensor init: " + std::to_string(values.size()) +
                      " values for shape " + shape_str(shape));
    TensorT t;
    t.data_ = std::make_shared<detail::TensorStorage<T>>();
    t.data_->shape = std::move(shape);
    check_extents(t.data_->shape);
    t.data_->values = std::move(values);
    t.data_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int64_t dim() const { return static_cast<int64_t>(data_->shape.size()); }
  int64_t size(int64_t axis) const {
    int64_t d = dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d)
      throw_error(ErrorCategory::kDimension, "axis out of range");
    return data_->shape[static_cast<size_t>(axis)];
  }
  int64_t numel() const { return static_cast<int64_t>(data_->values.size()); }

  std::span<T> values() { return data_->values; }
  std::span<const T> values() const { return data_->values; }
  T* vptr() { return data_->values.data(); }
  const T* vptr() const { return data_->values.data(); }

  bool requires_grad() const { return data_ && data_->requires_grad; }
  // Marks the tensor as participating in autodiff. The gradient buffer itself
  // is allocated lazily on first grad() access.
  void set_requires_grad(bool rg) { data_->requires_grad = rg; }

  bool has_grad() const { return data_ && !data_->grad.empty(); }
  // Allocates the gradient buffer on first use.
  std::span<T> grad() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), T(0));
    return data_->grad;
  }
  std::span<const T> grad() const { return data_->grad; }
  void zero_grad() {
    if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw_error(ErrorCategory::kContract,
                  "item() on tensor of shape " + shape_str(shape()));
    return data_->values[0];
  }

  // Stable identity for tape bookkeeping and parameter registries.
  const void* id() const { return data_.get(); }
  bool same_storage(const TensorT& o) const { return data_ == o.data_; }

  bool all_finite() const {
    for (T v : data_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  static void check_extents(const Shape& s) {
    for (int64_t d : s)
      if (d <= 0)
        throw_error(ErrorCategory::kDimension,
                    "non-positive extent in shape " + shape_str(s));
  }

  std::shared_ptr<detail::TensorStorage<T>> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace match2
