#pragma once

#include <vector>

#include "match2/common.hpp"
#include "match2/core/tensor.hpp"

namespace match2::testing {

template <typename T>
TensorT<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                         bool requires_grad = false) {
  auto t = TensorT<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
TensorT<T> random_normal_tensor(Rng& rng, Shape shape, double stddev = 1.0,
                                bool requires_grad = false) {
  auto t = TensorT<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  double worst = 0.0;
  auto va = a.values();
  auto vb = b.values();
  for (size_t i = 0; i < va.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(va[i]) - static_cast<double>(vb[i])));
  return worst;
}

}  // namespace match2::testing
