#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "match2/core/ops.hpp"

namespace match2 {

struct FiniteDiffStats {
  int64_t checked = 0;
  int64_t skipped = 0;  // coordinates where the central estimate is invalid
};

// Gradient check against central differences on a stencil of width h
// (evaluations at +-h and +-h/2, Richardson-extrapolated so the h^2
// truncation term cancels). f maps (tape, x) to a scalar loss and must be
// deterministic. Returns the max over coordinates of
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Meant to run with T = double; h defaults to 1e-3.
//
// Coordinates where the one-sided slopes disagree at either scale are
// excluded: there the function is not locally smooth inside the stencil (a
// relu or |.| boundary sits in it) and a difference quotient estimates
// nothing. Both the exclusion and the extrapolation use function values
// only, never the analytic gradient, so a wrong backward rule cannot hide
// behind them.
template <typename T, typename F>
double finite_diff_check(F f, TensorT<T> x, T h = T(1e-3),
                         FiniteDiffStats* stats = nullptr) {
  x.set_requires_grad(true);
  x.zero_grad();
  TapeT<T> tape;
  TensorT<T> loss = f(&tape, x);
  tape.backward(loss);
  std::vector<T> analytic(x.grad().begin(), x.grad().end());

  const double hd = static_cast<double>(h);
  double base = static_cast<double>(f(nullptr, x).item());
  double worst = 0.0;
  auto vals = x.values();
  auto smooth = [](double d_plus, double d_minus) {
    return std::abs(d_plus - d_minus) <=
           5e-4 * std::max(std::abs(d_plus) + std::abs(d_minus), 1e-5);
  };
  for (int64_t i = 0; i < x.numel(); ++i) {
    T saved = vals[i];
    auto eval_at = [&](double offset) {
      vals[i] = static_cast<T>(static_cast<double>(saved) + offset);
      double value = static_cast<double>(f(nullptr, x).item());
      vals[i] = saved;
      return value;
    };
    double up = eval_at(hd);
    double down = eval_at(-hd);
    double up_half = eval_at(hd / 2);
    double down_half = eval_at(-hd / 2);
    if (!smooth((up - base) / hd, (base - down) / hd) ||
        !smooth((up_half - base) / (hd / 2), (base - down_half) / (hd / 2))) {
      if (stats) stats->skipped++;
      continue;
    }
    if (stats) stats->checked++;
    double central_h = (up - down) / (2.0 * hd);
    double central_half = (up_half - down_half) / hd;
    double numeric = (4.0 * central_half - central_h) / 3.0;
    double a = static_cast<double>(analytic[i]);
    double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace match2
