#pragma once

// Rectified Adam. Per-coordinate moments with bias correction; while the
// variance estimate is untrustworthy (rho_t <= 4, the first few steps under
// beta2=0.999) the update falls back to plain momentum, afterwards the
// variance term is rectified by r_t.

#include <cmath>
#include <string>
#include <vector>

#include "match2/model/registry.hpp"

namespace match2 {

struct RAdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
};

inline double radam_rho_inf(double beta2) { return 2.0 / (1.0 - beta2) - 1.0; }

inline double radam_rho_t(double beta2, int64_t t) {
  double b2t = std::pow(beta2, static_cast<double>(t));
  return radam_rho_inf(beta2) -
         2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
}

template <typename T>
class RAdamOptimizer {
 public:
  explicit RAdamOptimizer(RAdamConfig config = {}) : config_(config) {}

  // One update over every parameter in the registry; gradients are consumed
  // as-is (call zero_grad afterwards). Throws on non-finite gradients.
  void step(ParamRegistry<T>& params) {
    ensure_state(params);
    ++t_;
    double b1 = config_.beta1, b2 = config_.beta2;
    double b1t = std::pow(b1, static_cast<double>(t_));
    double b2t = std::pow(b2, static_cast<double>(t_));
    double rho_inf = radam_rho_inf(b2);
    double rho_t = radam_rho_t(b2, t_);
    bool rectified = rho_t > 4.0;
    double r_t = 1.0;
    if (rectified)
      r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                      ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    for (size_t p = 0; p < params.size(); ++p) {
      auto& entry = params.entries()[p];
      auto values = entry.tensor.values();
      auto grads = entry.tensor.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (size_t i = 0; i < values.size(); ++i) {
        double g = static_cast<double>(grads[i]);
        if (!std::isfinite(g))
          throw_error(ErrorCategory::kInternal,
                      "non-finite gradient in parameter " + entry.name +
                          " at index " + std::to_string(i));
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        double m_hat = m[i] / (1.0 - b1t);
        double update;
        if (rectified) {
          double l_t = std::sqrt(1.0 - b2t) / (std::sqrt(v[i]) + config_.epsilon);
          update = config_.lr * r_t * m_hat * l_t;
        } else {
          update = config_.lr * m_hat;
        }
        values[i] = static_cast<T>(static_cast<double>(values[i]) - update);
      }
    }
  }

  int64_t step_count() const { return t_; }
  const RAdamConfig& config() const { return config_; }

  // moment buffers, ordered like the registry (for checkpoints)
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(int64_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v) {
    t_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  void ensure_state(const ParamRegistry<T>& params) {
    if (!m_.empty()) {
      if (m_.size() != params.size())
        throw_error(ErrorCategory::kContract,
                    "optimizer state does not match the parameter registry");
      return;
    }
    for (const auto& e : params.entries()) {
      m_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
    }
  }

  RAdamConfig config_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace match2
